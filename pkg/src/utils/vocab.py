"""
Toy token vocabulary for the synthetic verifiable tasks.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, NewType, Sequence

from src.utils.errors import ContractViolation

Token = NewType("Token", int)

BOX_OPEN_TEXT = "\\boxed{"
BOX_CLOSE_TEXT = "}"

_RESERVED = ("<pad>", "<eos>", BOX_OPEN_TEXT, BOX_CLOSE_TEXT, "<query>", "<unk>")
_DIGITS = tuple(str(d) for d in range(10))
_OPERATORS = ("+", "-", "*", "=", "?")
_WORDS = ("echo", "max")


@dataclass(frozen=True)
class Vocabulary:
    """
    Ordered, duplicate-free symbol table with reserved control tokens.

    Reserved ids are looked up by symbol so a custom symbol list only has to
    contain the reserved strings somewhere.
    """
    symbols: tuple
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise ContractViolation("vocabulary symbols must be unique")
        missing = [s for s in _RESERVED if s not in self.symbols]
        if missing:
            raise ContractViolation(f"vocabulary lacks reserved symbols {missing}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(symbols=_RESERVED + _DIGITS + _OPERATORS + _WORDS)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> Token:
        return Token(self._index["<pad>"])

    @property
    def eos_id(self) -> Token:
        return Token(self._index["<eos>"])

    @property
    def box_open_id(self) -> Token:
        return Token(self._index[BOX_OPEN_TEXT])

    @property
    def box_close_id(self) -> Token:
        return Token(self._index[BOX_CLOSE_TEXT])

    @property
    def query_id(self) -> Token:
        return Token(self._index["<query>"])

    @property
    def unk_id(self) -> Token:
        return Token(self._index["<unk>"])

    def token(self, token_id: int) -> Token:
        if not 0 <= int(token_id) < len(self.symbols):
            raise ContractViolation(f"token id {token_id} outside vocabulary of size {len(self)}")
        return Token(int(token_id))

    def id_of(self, symbol: str) -> Token:
        return Token(self._index.get(symbol, self._index["<unk>"]))

    def fingerprint(self) -> str:
        """Stable hash used to pair checkpoints with the vocabulary they were trained on."""
        payload = "\x1f".join(self.symbols).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def encode_prompt(self, text: str) -> List[Token]:
        """Tokenize a prompt: known words whole, anything else per character; ends with QUERY."""
        tokens: List[Token] = []
        for word in text.split():
            if word in self._index:
                tokens.append(Token(self._index[word]))
            else:
                tokens.extend(self.id_of(ch) for ch in word)
        tokens.append(self.query_id)
        return tokens

    def encode_answer(self, answer: str) -> List[Token]:
        """Boxed answer span the way a well-behaved policy emits it, EOS included."""
        body = [self.id_of(ch) for ch in answer if not ch.isspace()]
        return [self.box_open_id, *body, self.box_close_id, self.eos_id]

    def detokenize(self, token_ids: Sequence[int]) -> str:
        """Response text up to (not including) the first EOS; PAD is dropped."""
        pieces = []
        for tid in token_ids:
            tid = int(tid)
            if tid == self.eos_id:
                break
            if tid == self.pad_id:
                continue
            pieces.append(self.symbols[tid])
        return "".join(pieces)
