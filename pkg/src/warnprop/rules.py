"""Finite alphabets and count-capped Warning Propagation update rules.

A rule maps a multiset over the alphabet to a symbol. It only looks at the
count of each symbol, capped at ``cap``, so it is stored as a dense table
over ``{0..cap}^|alphabet|``. Symbols are strings on the outside and dense
integer indices everywhere else.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .errors import InputError, ParameterError, ValidationError

MAX_ALPHABET = 16


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]

    def __post_init__(self):
        syms = tuple(str(s) for s in self.symbols)
        object.__setattr__(self, "symbols", syms)
        if not syms:
            raise ValidationError("alphabet must be nonempty")
        if len(set(syms)) != len(syms):
            raise ValidationError(f"alphabet symbols must be distinct: {syms}")
        if len(syms) > MAX_ALPHABET:
            raise ValidationError(f"alphabet has {len(syms)} symbols, at most {MAX_ALPHABET} allowed")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol) -> int:
        try:
            return self.symbols.index(str(symbol))
        except ValueError:
            raise InputError(f"unknown symbol {symbol!r}; alphabet is {self.symbols}") from None

    def name(self, i: int) -> str:
        return self.symbols[i]

    def format_story(self, story) -> str:
        """Join a sequence of symbol indices into a compact string."""
        names = [self.symbols[int(i)] for i in story]
        if all(len(s) == 1 for s in self.symbols):
            return "".join(names)
        return ".".join(names)

    def parse_story(self, text: str) -> tuple[int, ...]:
        if all(len(s) == 1 for s in self.symbols):
            parts = list(text)
        else:
            parts = text.split(".")
        return tuple(self.index(p) for p in parts)


@dataclass(frozen=True, eq=False)
class UpdateRule:
    """Symmetric update rule evaluated through capped count vectors.

    ``table`` has shape ``(cap+1,) * alphabet.size`` and holds output symbol
    indices. Axis ``i`` is the (capped) count of symbol ``i``.
    """

    alphabet: Alphabet
    cap: int
    table: np.ndarray
    kind: str = "table"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        S = self.alphabet.size
        if self.cap < 0:
            raise ParameterError("cap must be nonnegative")
        tab = np.asarray(self.table)
        if tab.shape != (self.cap + 1,) * S:
            raise ValidationError(f"table shape {tab.shape} does not match cap={self.cap}, |alphabet|={S}")
        if tab.size and (tab.min() < 0 or tab.max() >= S):
            raise ValidationError("table holds out-of-range symbol indices")
        tab = tab.astype(np.int8 if S <= 127 else np.int16)
        tab.setflags(write=False)
        object.__setattr__(self, "table", tab)
        radix = (self.cap + 1) ** np.arange(S - 1, -1, -1, dtype=np.int64)
        object.__setattr__(self, "_radix", radix)
        object.__setattr__(self, "_flat", tab.reshape(-1))

    @property
    def size(self) -> int:
        return self.alphabet.size

    @property
    def n_states(self) -> int:
        return (self.cap + 1) ** self.alphabet.size

    def flat_index(self, counts) -> np.ndarray:
        """Row-major index of capped count vectors (last axis = symbol)."""
        c = np.minimum(np.asarray(counts, dtype=np.int64), self.cap)
        return c @ self._radix

    def lookup(self, counts) -> np.ndarray:
        """Vectorised evaluation; ``counts`` has the symbol axis last."""
        return self._flat[self.flat_index(counts)]

    def eval_index(self, counts) -> int:
        c = np.asarray(counts, dtype=np.int64)
        if c.shape != (self.size,):
            raise InputError(f"count vector must have length {self.size}")
        if (c < 0).any():
            raise InputError("counts must be nonnegative")
        return int(self.lookup(c))

    def __call__(self, multiset: Sequence[str]) -> str:
        counts = np.zeros(self.size, dtype=np.int64)
        for s in multiset:
            counts[self.alphabet.index(s)] += 1
        return self.alphabet.name(self.eval_index(counts))

    def empty_output(self) -> int:
        return int(self._flat[0])

    def default_init(self) -> np.ndarray:
        """Initial law used when none is given: point mass for kcore/constant, else uniform."""
        q = np.zeros(self.size)
        if self.kind == "kcore":
            q[self.alphabet.index("1")] = 1.0
        elif self.kind == "constant":
            q[self.alphabet.index(self.params["symbol"])] = 1.0
        else:
            q[:] = 1.0 / self.size
        return q

    def to_spec(self) -> dict:
        spec = {"alphabet": list(self.alphabet.symbols), "kind": self.kind}
        if self.kind == "kcore":
            spec["k"] = self.params["k"]
        elif self.kind == "constant":
            spec["symbol"] = self.params["symbol"]
        else:
            spec["cap"] = self.cap
            spec["table"] = [
                {"counts": list(idx), "out": self.alphabet.name(int(self.table[idx]))}
                for idx in product(range(self.cap + 1), repeat=self.size)
            ]
        return spec

    def __repr__(self):
        if self.kind == "kcore":
            return f"UpdateRule(kcore, k={self.params['k']})"
        if self.kind == "constant":
            return f"UpdateRule(constant, symbol={self.params['symbol']!r})"
        return f"UpdateRule(table, alphabet={self.alphabet.symbols}, cap={self.cap})"


def kcore_rule(k: int) -> UpdateRule:
    """Peeling rule: send "1" iff at least k-1 other neighbours send "1"."""
    if int(k) != k or k < 2:
        raise ParameterError(f"kcore needs integer k >= 2, got {k}")
    k = int(k)
    cap = k - 1
    table = np.zeros((cap + 1, cap + 1), dtype=np.int8)
    table[:, cap] = 1  # axis 1 = count of "1"
    return UpdateRule(Alphabet(("0", "1")), cap, table, kind="kcore", params={"k": k})


def constant_rule(symbol: str, alphabet=None) -> UpdateRule:
    alpha = Alphabet(tuple(alphabet) if alphabet is not None else (str(symbol),))
    out = alpha.index(symbol)
    table = np.full((1,) * alpha.size, out, dtype=np.int8)
    return UpdateRule(alpha, 0, table, kind="constant", params={"symbol": str(symbol)})


def table_rule(alphabet, cap: int, entries) -> UpdateRule:
    alpha = Alphabet(tuple(alphabet))
    if int(cap) != cap or cap < 0:
        raise ParameterError(f"cap must be a nonnegative integer, got {cap}")
    cap = int(cap)
    S = alpha.size
    table = np.full((cap + 1,) * S, -1, dtype=np.int16)
    for entry in entries:
        counts = tuple(entry["counts"])
        if len(counts) != S or any(int(c) != c or not 0 <= c <= cap for c in counts):
            raise ValidationError(f"bad table key {counts} for cap={cap}, |alphabet|={S}")
        out = alpha.index(entry["out"])
        if table[counts] not in (-1, out):
            raise ValidationError(f"conflicting outputs for counts {counts}")
        table[counts] = out
    missing = int((table < 0).sum())
    if missing:
        raise ValidationError(f"partial table: {missing} of {table.size} count vectors have no output")
    return UpdateRule(alpha, cap, table, kind="table")


def make_rule(spec: Mapping) -> UpdateRule:
    """Build a rule from a specification document (see ``load_rule``)."""
    kind = spec.get("kind")
    if kind == "kcore":
        if "k" not in spec:
            raise ValidationError("kcore rule needs k")
        if "alphabet" in spec and tuple(spec["alphabet"]) != ("0", "1"):
            raise ValidationError('kcore rules use the alphabet ["0", "1"]')
        return kcore_rule(spec["k"])
    if kind == "constant":
        if "symbol" not in spec:
            raise ValidationError("constant rule needs symbol")
        return constant_rule(spec["symbol"], spec.get("alphabet"))
    if kind == "table":
        for key in ("alphabet", "cap", "table"):
            if key not in spec:
                raise ValidationError(f"table rule needs {key}")
        return table_rule(spec["alphabet"], spec["cap"], spec["table"])
    raise ValidationError(f"unknown rule kind {kind!r}")


def load_rule(source) -> UpdateRule:
    """Rule from a JSON file path, a dict, or a shorthand like ``kcore:3`` / ``constant:a``."""
    if isinstance(source, UpdateRule):
        return source
    if isinstance(source, Mapping):
        return make_rule(source)
    text = str(source)
    path = Path(text)
    if path.exists():
        try:
            spec = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        return make_rule(spec)
    if text.startswith("kcore:"):
        try:
            return kcore_rule(int(text.split(":", 1)[1]))
        except ValueError:
            raise ParameterError(f"bad kcore shorthand {text!r}") from None
    if text.startswith("constant:"):
        parts = text.split(":")
        alphabet = parts[2].split(",") if len(parts) > 2 else None
        return constant_rule(parts[1], alphabet)
    raise InputError(f"rule {text!r} is neither a file nor a known shorthand")


def counts_vector(rule: UpdateRule, counts) -> np.ndarray:
    if isinstance(counts, Mapping):
        vec = np.zeros(rule.size, dtype=np.int64)
        for key, c in counts.items():
            i = key if isinstance(key, (int, np.integer)) else rule.alphabet.index(key)
            if not 0 <= i < rule.size:
                raise InputError(f"unknown symbol index {key!r}")
            vec[i] += c
        return vec
    vec = np.asarray(counts, dtype=np.int64)
    if vec.shape != (rule.size,):
        raise InputError(f"count vector must have length {rule.size}")
    return vec


def eval_rule(rule: UpdateRule, counts) -> str:
    """Evaluate ``rule`` on a count vector (sequence or mapping symbol -> count).

    Mapping keys may be symbol names or integer indices. Counts above the
    cap are allowed and capped here.
    """
    vec = counts_vector(rule, counts)
    return rule.alphabet.name(rule.eval_index(vec))
