"""Data-driven matching rules for security feature extraction.

The knowledge an analyst would hard-code (which registry keys grant
persistence, which files hold credentials, how the file system splits
into semantic regions, which networks are internal) lives in a
line-oriented rule file so it stays auditable and versioned. Rule order
matters for path categories: first match wins.
"""
from __future__ import annotations

import fnmatch
import hashlib
import ipaddress
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import IoFailure, MalformedRecord


class PathCategory(str, Enum):
    AUTOSTART = "AUTOSTART"
    TEMP = "TEMP"
    SYSTEM = "SYSTEM"
    PROGRAM_FILES = "PROGRAM_FILES"
    APPDATA = "APPDATA"
    USER = "USER"
    NETWORK_SHARE = "NETWORK_SHARE"
    OTHER = "OTHER"


REGISTRY_CLASSES = ("persistence", "internet", "uninstall", "notify")

# executable payloads for dropped-binary tracking
EXECUTABLE_EXTENSIONS = frozenset({
    ".exe", ".dll", ".scr", ".com", ".bat", ".cmd", ".ps1", ".vbs", ".js", ".msi", ".pif",
})

# %VAR% prefixes expanded before matching; all patterns are lowercase
_ENV_EXPANSIONS = (
    ("%appdata%", "c:\\users\\default\\appdata\\roaming"),
    ("%localappdata%", "c:\\users\\default\\appdata\\local"),
    ("%temp%", "c:\\users\\default\\appdata\\local\\temp"),
    ("%tmp%", "c:\\users\\default\\appdata\\local\\temp"),
    ("%userprofile%", "c:\\users\\default"),
    ("%programfiles(x86)%", "c:\\program files (x86)"),
    ("%programfiles%", "c:\\program files"),
    ("%programdata%", "c:\\programdata"),
    ("%windir%", "c:\\windows"),
    ("%systemroot%", "c:\\windows"),
)


def normalize_path(path: str) -> str:
    """Lowercase, forward slashes to backslashes, %VAR% prefixes expanded."""
    p = path.strip().lower().replace("/", "\\")
    for var, expansion in _ENV_EXPANSIONS:
        if var in p:
            p = p.replace(var, expansion)
    return p


class _PatternList:
    """Ordered glob patterns compiled once; match() returns the first hit index."""

    def __init__(self, patterns: list[str]):
        self.patterns = list(patterns)
        self._compiled = [re.compile(fnmatch.translate(p)) for p in patterns]

    def match(self, text: str) -> int | None:
        for i, rx in enumerate(self._compiled):
            if rx.match(text):
                return i
        return None

    def matches(self, text: str) -> bool:
        return self.match(text) is not None


@dataclass
class RuleSet:
    path_rules: list[tuple[str, PathCategory]]  # ordered, first match wins
    registry_rules: dict[str, list[str]]  # class name -> patterns
    sensitive_file_rules: list[str]
    internal_ip_ranges: list[str]  # CIDR blocks
    service_port_vocab: tuple[int, ...]
    version: str  # content hash of the source rule file

    def __post_init__(self):
        self._path_matcher = _PatternList([p for p, _ in self.path_rules])
        self._registry_matchers = {
            cls: _PatternList(pats) for cls, pats in self.registry_rules.items()
        }
        self._sensitive_matcher = _PatternList(self.sensitive_file_rules)
        self._networks = [ipaddress.ip_network(c) for c in self.internal_ip_ranges]
        self._port_set = frozenset(self.service_port_vocab)


def categorize_path(rules: RuleSet, path: str) -> PathCategory:
    """First matching path rule's category; OTHER when nothing matches."""
    hit = rules._path_matcher.match(normalize_path(path))
    if hit is None:
        return PathCategory.OTHER
    return rules.path_rules[hit][1]


def classify_registry_key(rules: RuleSet, key_path: str) -> dict[str, bool]:
    """One boolean per registry class; classes are not mutually exclusive."""
    key = normalize_path(key_path)
    return {
        cls: rules._registry_matchers[cls].matches(key) if cls in rules._registry_matchers else False
        for cls in REGISTRY_CLASSES
    }


def is_sensitive_file(rules: RuleSet, path: str) -> bool:
    return rules._sensitive_matcher.matches(normalize_path(path))


def is_internal_ip(rules: RuleSet, ip: str) -> bool:
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return False
    return any(addr in net for net in rules._networks)


def service_port_category(rules: RuleSet, port: int) -> str:
    """Well-known vocabulary port, EPHEMERAL for the dynamic range, else OTHER."""
    if port in rules._port_set:
        return str(port)
    if port >= 49152:
        return "EPHEMERAL"
    return "OTHER"


def parse_rules(text: str) -> RuleSet:
    """Parse the line-oriented rule format: `class<TAB>pattern`, `#` comments."""
    path_rules: list[tuple[str, PathCategory]] = []
    registry_rules: dict[str, list[str]] = {cls: [] for cls in REGISTRY_CLASSES}
    sensitive: list[str] = []
    ip_ranges: list[str] = []
    ports: list[int] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise MalformedRecord(f"rules line {lineno}: expected class<TAB>pattern")
        cls, pattern = line.split("\t", 1)
        cls = cls.strip().lower()
        pattern = pattern.strip()
        if not pattern:
            raise MalformedRecord(f"rules line {lineno}: empty pattern")
        if cls.startswith("path:"):
            name = cls.split(":", 1)[1].upper()
            try:
                category = PathCategory[name]
            except KeyError:
                raise MalformedRecord(f"rules line {lineno}: unknown path category {name}") from None
            path_rules.append((pattern.lower(), category))
        elif cls.startswith("reg:"):
            name = cls.split(":", 1)[1]
            if name not in REGISTRY_CLASSES:
                raise MalformedRecord(f"rules line {lineno}: unknown registry class {name}")
            registry_rules[name].append(pattern.lower())
        elif cls == "sensitive":
            sensitive.append(pattern.lower())
        elif cls == "internal_ip":
            try:
                ipaddress.ip_network(pattern)
            except ValueError as exc:
                raise MalformedRecord(f"rules line {lineno}: bad CIDR: {exc}") from None
            ip_ranges.append(pattern)
        elif cls == "port":
            try:
                ports.append(int(pattern))
            except ValueError:
                raise MalformedRecord(f"rules line {lineno}: bad port {pattern!r}") from None
        else:
            raise MalformedRecord(f"rules line {lineno}: unknown rule class {cls!r}")

    version = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return RuleSet(
        path_rules=path_rules,
        registry_rules=registry_rules,
        sensitive_file_rules=sensitive,
        internal_ip_ranges=ip_ranges,
        service_port_vocab=tuple(sorted(set(ports))),
        version=version,
    )


def load_rules(path: str | Path) -> RuleSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read rules file {path}: {exc}") from None
    return parse_rules(text)


def default_rules() -> RuleSet:
    """The packaged rule fixture."""
    text = resources.files("provsight").joinpath("data/default_rules.tsv").read_text("utf-8")
    return parse_rules(text)
