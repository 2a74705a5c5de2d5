"""Model files and the built-in corpus.

A model file is a sequence of bracketed sections::

    [coordinates] q1 q2
    [parameters]  k = 1.0
    [lagrangian]  0.5*(d(q1) - q2)^2
    [initial]     q1 = 0  q2 = 1  v1 = 1  v2 = 0
    [gauge]       v2 = 0
    [integrate]   t0 = 0  t1 = 10  dt = 1e-3
    [options]     convention = auto  seed = 42

A section's body runs from its header to the next header and may span
lines.  ``#`` starts a comment.  Only ``[coordinates]`` and ``[lagrangian]``
are required.
"""

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as E
from .analysis import default_samples
from .brackets import PhasePoint
from .config import DEFAULT_TOLERANCES
from .errors import ModelError, ParseError

CORPUS_DIR = Path(__file__).with_name("corpus")
SECTIONS = ("coordinates", "parameters", "lagrangian", "initial", "gauge", "integrate", "options")
CONVENTION_CHOICES = ("auto", "A", "B")
INTEGER_OPTIONS = {"seed", "samples", "newton_maxit"}
FLOAT_OPTIONS = {"rank_rtol", "newton_tol", "probe_tol", "consistency_tol", "fd_step"}

_HEADER_RE = re.compile(r"^[ \t]*\[([^\]\n]*)\]", re.M)
_KEY_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)[ \t]*=")
_NAME_LIST_RE = re.compile(r"[^\s,]+")


@dataclass
class Section:
    name: str
    body: str
    line: int
    column: int

    def locate(self, offset):
        """Line and column of ``offset`` within the body."""
        before = self.body[:offset]
        nl = before.count("\n")
        if nl == 0:
            return self.line, self.column + offset
        return self.line + nl, offset - before.rfind("\n")


@dataclass
class Entry:
    """``key = value``; ``line``/``column`` locate the value, ``key_at`` the key."""

    key: str
    value: str
    line: int
    column: int
    key_at: tuple = (1, 1)


@dataclass
class ModelSpec:
    """A parsed model file."""

    name: str
    source: str
    coordinates: tuple
    parameters: dict
    lagrangian: E.Expr
    table: E.SymbolTable
    initial: dict = field(default_factory=dict)
    gauge: dict = None
    t0: float = 0.0
    t1: float = 10.0
    dt: float = 1e-3
    convention: str = "auto"
    tolerances: object = DEFAULT_TOLERANCES
    path: str = None
    warnings: list = field(default_factory=list)

    @property
    def content_hash(self):
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()

    def samples(self):
        return default_samples(self.table, self.tolerances.n_samples, self.tolerances.seed)

    def build_system(self, backend=None):
        from .transform import ClairautSystem

        return ClairautSystem(
            self.lagrangian,
            self.table,
            tolerances=self.tolerances,
            backend=backend,
            samples=self.samples(),
        )

    def initial_point(self, system):
        """Initial :class:`PhasePoint` and a Newton guess for ``V^i``.

        Regular momenta come either directly from ``p`` entries or from
        ``p_i = dL/dv^i`` at the given ``(q, v)``.
        """
        table = self.table
        q = np.array([self.initial.get(c, 0.0) for c in table.coordinates])
        v = np.array([self.initial.get(s, 0.0) for s in table.velocities])
        reg = list(system.regular)
        p_names = system.momentum_names
        given = [name for name in table.momentum_names(range(table.n)) if name in self.initial]
        stray = sorted(set(given) - set(p_names))
        if stray:
            raise ModelError(
                f"initial momenta {stray} belong to degenerate coordinates; "
                f"only {list(p_names)} exist on the restricted phase space"
            )
        if given:
            missing = [name for name in p_names if name not in self.initial]
            if missing:
                raise ModelError(f"initial momenta incomplete: missing {missing}")
            clash = [table.velocities[k] for k in reg if table.velocities[k] in self.initial]
            if clash:
                raise ModelError(f"initial state gives both momenta and regular velocities {clash}")
            p = np.array([self.initial[name] for name in p_names])
            guess = np.zeros(len(reg))
        else:
            binding = dict(zip(table.coordinates, q))
            binding.update(zip(table.velocities, v))
            binding.update(table.parameters)
            grads = system.hessian.gradient_v
            p = np.array([E.evaluate(grads[k], binding) for k in reg])
            guess = v[reg]
        return PhasePoint(q, p, v[list(system.degenerate)], self.t0), guess

    def gauge_choice(self, system):
        """Gauge expressions checked against the split (``None`` if absent)."""
        from .evolution import GaugeChoice

        if self.gauge is None:
            return None
        deg = {system.table.velocity_of(c) for c in system.degenerate_names}
        bad = sorted(set(self.gauge) - deg)
        if bad:
            raise ModelError(f"gauge given for regular velocities {bad}")
        allowed = set(("t",) + self.table.coordinates + system.momentum_names)
        for name, e in self.gauge.items():
            extra = E.free_symbols(e) - allowed - set(self.table.parameters)
            if extra:
                raise ModelError(f"gauge for {name} uses {sorted(extra)}; allowed are t, q and regular momenta")
        return GaugeChoice(system, self.gauge)


def _split_sections(text):
    headers = list(_HEADER_RE.finditer(text))
    first = headers[0].start() if headers else len(text)
    lead = text[:first]
    if lead.strip():
        off = len(lead) - len(lead.lstrip())
        line = text[:off].count("\n") + 1
        raise ParseError("text before the first section header", line, off - text.rfind("\n", 0, off))
    sections = {}
    for k, h in enumerate(headers):
        name = h.group(1).strip()
        line = text[: h.start()].count("\n") + 1
        bracket = text.index("[", h.start())
        col = bracket - text.rfind("\n", 0, bracket)
        if name not in SECTIONS:
            raise ParseError(f"unknown section [{name}]", line, col)
        if name in sections:
            raise ParseError(f"duplicate section [{name}]", line, col)
        end = headers[k + 1].start() if k + 1 < len(headers) else len(text)
        body_col = h.end() - text.rfind("\n", 0, h.end())
        sections[name] = Section(name, text[h.end() : end], line, body_col)
    return sections


def _strip_comments(text):
    # keep offsets: blank the comment text instead of removing it
    return re.sub(r"#[^\n]*", lambda m: " " * len(m.group(0)), text)


def _entries(section):
    body = section.body
    keys = list(_KEY_RE.finditer(body))
    lead = body[: keys[0].start()] if keys else body
    if lead.strip():
        off = len(lead) - len(lead.lstrip())
        raise ParseError(f"expected 'name = value' in [{section.name}]", *section.locate(off))
    out = []
    for k, m in enumerate(keys):
        end = keys[k + 1].start() if k + 1 < len(keys) else len(body)
        raw = body[m.end() : end]
        value = raw.strip()
        line, col = section.locate(m.start())
        if not value:
            raise ParseError(f"missing value for {m.group(1)!r}", line, col)
        vline, vcol = section.locate(m.end() + len(raw) - len(raw.lstrip()))
        if any(e.key == m.group(1) for e in out):
            raise ParseError(f"duplicate key {m.group(1)!r} in [{section.name}]", line, col)
        out.append(Entry(m.group(1), value, vline, vcol, (line, col)))
    return out


def _number(entry, kind=float):
    try:
        if kind is int:
            return int(entry.value)
        return float(entry.value)
    except ValueError:
        raise ParseError(f"{entry.key}: expected a number, got {entry.value!r}", entry.line, entry.column) from None


def parse_model(text, name="model", path=None):
    """Parse model-file text into a :class:`ModelSpec`."""
    clean = _strip_comments(text)
    sections = _split_sections(clean)
    for required in ("coordinates", "lagrangian"):
        if required not in sections:
            raise ModelError(f"missing [{required}] section")

    sec = sections["coordinates"]
    coords = []
    for m in _NAME_LIST_RE.finditer(sec.body):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", m.group(0)):
            raise ParseError(f"invalid coordinate name {m.group(0)!r}", *sec.locate(m.start()))
        coords.append(m.group(0))
    if not coords:
        raise ModelError("[coordinates] lists no coordinates")

    params = {}
    if "parameters" in sections:
        for entry in _entries(sections["parameters"]):
            ptable = E.SymbolTable((), params)
            e = E.parse(entry.value, ptable, line=entry.line, column=entry.column)
            params[entry.key] = E.evaluate(e, params)
    try:
        table = E.SymbolTable(coords, params)
    except ValueError as exc:
        raise ModelError(str(exc)) from None

    sec = sections["lagrangian"]
    if not sec.body.strip():
        raise ModelError("[lagrangian] is empty")
    off = len(sec.body) - len(sec.body.lstrip())
    line, col = sec.locate(off)
    lagrangian = E.parse(sec.body.strip(), table, line=line, column=col)

    spec = ModelSpec(name, text, table.coordinates, params, lagrangian, table, path=path)

    if "initial" in sections:
        admissible = set(table.coordinates) | set(table.velocities)
        admissible |= set(table.momentum_names(range(table.n)))
        for entry in _entries(sections["initial"]):
            if entry.key not in admissible:
                raise ParseError(f"unknown initial-state key {entry.key!r}", *entry.key_at)
            spec.initial[entry.key] = _number(entry)

    if "gauge" in sections:
        gtable = table.extended(table.momentum_names(range(table.n)) + ("t",))
        spec.gauge = {}
        for entry in _entries(sections["gauge"]):
            if entry.key not in table.velocities:
                raise ParseError(f"gauge key {entry.key!r} is not a velocity", *entry.key_at)
            spec.gauge[entry.key] = E.parse(entry.value, gtable, line=entry.line, column=entry.column)

    if "integrate" in sections:
        for entry in _entries(sections["integrate"]):
            if entry.key not in ("t0", "t1", "dt"):
                raise ParseError(f"unknown [integrate] key {entry.key!r}", *entry.key_at)
            setattr(spec, entry.key, _number(entry))
        if not spec.t1 > spec.t0:
            raise ModelError("[integrate] needs t1 > t0")
        if not spec.dt > 0:
            raise ModelError("[integrate] needs dt > 0")

    tol = {}
    if "options" in sections:
        for entry in _entries(sections["options"]):
            if entry.key == "convention":
                if entry.value not in CONVENTION_CHOICES:
                    raise ParseError(
                        f"convention must be one of {', '.join(CONVENTION_CHOICES)}", entry.line, entry.column
                    )
                spec.convention = entry.value
            elif entry.key in INTEGER_OPTIONS:
                key = "n_samples" if entry.key == "samples" else entry.key
                tol[key] = _number(entry, int)
            elif entry.key in FLOAT_OPTIONS:
                tol[entry.key] = _number(entry)
            else:
                raise ParseError(f"unknown option {entry.key!r}", *entry.key_at)
    spec.tolerances = DEFAULT_TOLERANCES.updated(**tol)
    return spec


def corpus_names():
    return sorted(p.stem for p in CORPUS_DIR.glob("*.model"))


def load_model(path_or_name):
    """Load a model file, or a built-in corpus model by name."""
    path = Path(path_or_name)
    if not path.is_file():
        candidate = CORPUS_DIR / f"{path_or_name}.model"
        if candidate.is_file():
            path = candidate
        else:
            raise ModelError(f"no model file or corpus model named {str(path_or_name)!r}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ModelError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return parse_model(text, name=path.stem, path=str(path))


def load_corpus():
    return [load_model(name) for name in corpus_names()]
