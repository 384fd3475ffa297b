"""Deterministic synthetic corpus of benign and malicious sessions.

Every graph is a stream of generic noise events (shared vocabulary) with
a template chain interleaved. Benign templates deliberately include
individually suspicious events: updaters drop and start binaries and
register autostart entries, browsers read their own cookie stores and
talk to many external hosts, office sessions spawn shell children. The
malicious templates reuse those same building blocks, so no single event
separates the classes; only their combination within one session does.

Malicious chains are spread over at least sixty positions so short
windows see only fragments, and all process creations of a malicious
session happen early so one anchored 200-event window covers the chain.

Generation is deterministic: each graph derives its own generator from
(seed, graph index), so corpora are byte-identical across runs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .enrich import EnrichedGraph
from .errors import IoFailure, MalformedRecord
from .events import (
    EventLog,
    EventType,
    FileAccessAttrs,
    NetworkConnectionAttrs,
    ProcessRef,
    ProcessStartAttrs,
    RawEvent,
    RegistryAccessAttrs,
    make_log,
)

BENIGN = "benign"
MALICIOUS = "malicious"

BENIGN_TEMPLATES = ("browser-session", "office-session", "updater")
MALICIOUS_TEMPLATES = ("infostealer", "persistence-dropper", "cnc-beacon")

_WINLOGON = ProcessRef(pid=4, start_time=0, exe_path="C:\\Windows\\System32\\winlogon.exe")

_BROWSERS = ("chrome.exe", "firefox.exe", "msedge.exe", "opera.exe", "brave.exe")
_OFFICE = ("winword.exe", "excel.exe", "outlook.exe", "powerpnt.exe", "onenote.exe")
_UPDATERS = ("update.exe", "setup.exe", "onedrive_update.exe", "adobe_updater.exe",
             "java_updater.exe", "nv_updater.exe", "steam_helper.exe", "app_installer.exe")
_DESKTOP_APPS = ("slack.exe", "teams.exe", "zoom.exe", "spotify.exe", "vlc.exe",
                 "notepad.exe", "acrord32.exe", "steam.exe", "discord.exe", "code.exe",
                 "gitkraken.exe", "putty.exe", "7zfm.exe", "paintdotnet.exe", "calibre.exe")
_HELPER_NAMES = tuple(f"wksvc{i:02d}.exe" for i in range(18)) + \
    tuple(f"apphelper{i:02d}.exe" for i in range(18)) + \
    tuple(f"agent{i:02d}.exe" for i in range(14))

_DOC_EXTS = (".txt", ".docx", ".xlsx", ".pdf", ".pptx", ".csv", ".md", ".rtf", ".odt")
_MEDIA_EXTS = (".png", ".jpg", ".gif", ".mp3", ".mp4", ".ico", ".svg", ".bmp")
_DATA_EXTS = (".log", ".json", ".xml", ".ini", ".cfg", ".dat", ".db", ".cache", ".etl",
              ".zip", ".bin", ".tmp", ".bak", ".old")
_OPTIONS = ("SEQUENTIAL_SCAN", "RANDOM_ACCESS", "WRITE_THROUGH", "OVERLAPPED",
            "NO_BUFFERING", "BACKUP_SEMANTICS", "SEQUENTIAL_SCAN|WRITE_THROUGH",
            "RANDOM_ACCESS|OVERLAPPED", "DELETE_ON_CLOSE", "")
_VENDORS = ("Contoso", "Fabrikam", "Litware", "Northwind", "Proseware", "Adatum",
            "WingTip", "TailSpin")
_TOOL_STEMS = ("7zsetup", "vpnclient", "printdrv", "codecpack", "fontpack", "drvupd",
               "toolbox", "diskutil")
_PS_ONELINERS = ("Get-Date", "Get-NetIPConfiguration", "Get-Process | Out-Null",
                 "Get-ChildItem $env:TEMP | Measure-Object",
                 "Test-Connection localhost -Count 1", "Get-Culture")
# flag vocabularies shared by every spawned binary, wherever it came from
_INSTALL_FLAGS = ("/S", "/quiet /norestart", "-y", "--silent", "/quiet", "/install")
_SERVICE_FLAGS = ("--background", "-m service", "/quiet", "--log-level=2", "-svc", "")
_USERS = tuple(f"user{i:02d}" for i in range(1, 9))
_EXTERNAL_NETS = ("104.18.", "151.101.", "172.217.", "13.107.", "93.184.", "185.199.",
                  "52.84.", "23.56.")
_INTERNAL_NETS = ("192.168.1.", "10.1.2.", "172.20.4.")
_COMMON_PORTS = (443, 443, 443, 80, 8080, 53, 123)

_REG_VENDOR_KEYS = ("Settings", "State", "Cache", "Install", "Telemetry", "Window")
_REG_TYPES = ("REG_SZ", "REG_DWORD", "REG_BINARY", "REG_EXPAND_SZ", "REG_MULTI_SZ",
              "REG_QWORD")

_SENSITIVE_PATHS = (
    "AppData\\Local\\Google\\Chrome\\User Data\\Default\\Network\\Cookies",
    "AppData\\Local\\Google\\Chrome\\User Data\\Default\\Login Data",
    "AppData\\Local\\Google\\Chrome\\User Data\\Default\\Web Data",
    "AppData\\Roaming\\Mozilla\\Firefox\\Profiles\\x1.default\\cookies.sqlite",
    "AppData\\Roaming\\Mozilla\\Firefox\\Profiles\\x1.default\\logins.json",
    "AppData\\Roaming\\Mozilla\\Firefox\\Profiles\\x1.default\\key4.db",
    "AppData\\Roaming\\Electrum\\wallets\\default_wallet",
    "AppData\\Roaming\\Exodus\\exodus.wallet\\seed.seco",
    "Documents\\passwords.kdbx",
    "AppData\\Roaming\\Ethereum\\keystore\\UTC--key",
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_benign_graphs: int = 300
    n_malicious_graphs: int = 300
    noise_events_range: tuple[int, int] = (50, 400)
    benign_template_mix: dict[str, float] = field(
        default_factory=lambda: {t: 1.0 for t in BENIGN_TEMPLATES})
    malicious_template_mix: dict[str, float] = field(
        default_factory=lambda: {t: 1.0 for t in MALICIOUS_TEMPLATES})

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        lo, hi = self.noise_events_range
        if lo < 1 or hi < lo:
            raise ValueError("noise_events_range must be a non-empty positive range")
        for mix, known in ((self.benign_template_mix, BENIGN_TEMPLATES),
                           (self.malicious_template_mix, MALICIOUS_TEMPLATES)):
            if any(w < 0 for w in mix.values()):
                raise ValueError("template weights must be non-negative")
            if not any(mix.get(t, 0) > 0 for t in known):
                raise ValueError("at least one template must have positive weight")
            unknown = set(mix) - set(known)
            if unknown:
                raise ValueError(f"unknown templates: {sorted(unknown)}")


@dataclass(frozen=True)
class GraphTruth:
    head_pid: int
    head_start_time: int
    head_exe_path: str
    label: str
    template: str
    planted_event_ids: tuple[int, ...]

    @property
    def head_key(self) -> tuple[int, int]:
        return (self.head_pid, self.head_start_time)


@dataclass(frozen=True)
class GroundTruth:
    entries: tuple[GraphTruth, ...]

    def by_head(self) -> dict[tuple[int, int], GraphTruth]:
        return {e.head_key: e for e in self.entries}

    def to_json(self) -> str:
        doc = [
            {
                "head_pid": e.head_pid,
                "head_start_time": e.head_start_time,
                "head_exe_path": e.head_exe_path,
                "label": e.label,
                "template": e.template,
                "planted_event_ids": list(e.planted_event_ids),
            }
            for e in self.entries
        ]
        return json.dumps(doc, ensure_ascii=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        try:
            doc = json.loads(text)
            entries = tuple(
                GraphTruth(
                    head_pid=e["head_pid"],
                    head_start_time=e["head_start_time"],
                    head_exe_path=e["head_exe_path"],
                    label=e["label"],
                    template=e["template"],
                    planted_event_ids=tuple(e["planted_event_ids"]),
                )
                for e in doc
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedRecord(f"invalid ground truth document: {exc}") from None
        return cls(entries=entries)

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write ground truth to {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read ground truth from {path}: {exc}") from None


def apply_ground_truth(enriched: list[EnrichedGraph], gt: GroundTruth) -> list[EnrichedGraph]:
    """Label enriched graphs by their head process; timer continuations share it."""
    lookup = gt.by_head()
    out = []
    for eg in enriched:
        entry = lookup.get(eg.graph.head_process.key)
        if entry is None:
            out.append(eg)
            continue
        out.append(replace(eg, label=entry.label,
                           planted=frozenset(entry.planted_event_ids)))
    return out


class _Session:
    """One application session: event emission with session-local identity."""

    def __init__(self, rng: np.random.Generator, graph_index: int, base_time: int):
        self.rng = rng
        self.base_time = base_time
        self.cursor = base_time
        self.next_event_id = graph_index * 1_000_000 + 1
        self.next_pid = 1200
        self.user = _USERS[int(rng.integers(len(_USERS)))]
        self.src_ip = f"10.{int(rng.integers(2, 250))}.{int(rng.integers(1, 250))}.{int(rng.integers(2, 250))}"
        self.events: list[RawEvent] = []
        self.planted: list[int] = []
        self.head: ProcessRef | None = None
        self.processes: list[ProcessRef] = []
        self._parents: dict[tuple[int, int], ProcessRef] = {}
        self.pending_exe: str | None = None  # last tool download not yet run or removed

    # --- identity helpers ---

    def _tick(self) -> int:
        self.cursor += int(self.rng.integers(40, 2500))
        return self.cursor

    def _emit(self, event_type: EventType, actor: ProcessRef, attrs, ts: int,
              planted: bool, duration: int) -> RawEvent:
        event = RawEvent(
            event_id=self.next_event_id,
            timestamp=ts,
            event_type=event_type,
            actor=actor,
            parent=self._parents.get(actor.key),
            attrs=attrs,
            duration_ms=duration,
        )
        self.next_event_id += 1
        self.events.append(event)
        if planted:
            self.planted.append(event.event_id)
        return event

    # --- event emitters ---

    def start_head(self, exe_path: str, cmdline: str) -> ProcessRef:
        ts = self._tick()
        head = ProcessRef(pid=self.next_pid, start_time=ts, exe_path=exe_path)
        self.next_pid += 1
        self.head = head
        self._parents[head.key] = _WINLOGON
        self._emit(EventType.PROCESS_START, _WINLOGON,
                   ProcessStartAttrs(child=head, cmdline=cmdline), ts,
                   planted=False, duration=0)
        self.processes.append(head)
        return head

    def start_process(self, actor: ProcessRef, exe_path: str, cmdline: str,
                      planted: bool = False) -> ProcessRef:
        ts = self._tick()
        cmdline = str(cmdline)
        child = ProcessRef(pid=self.next_pid, start_time=ts, exe_path=str(exe_path))
        self.next_pid += 1
        self._parents[child.key] = actor
        self._emit(EventType.PROCESS_START, actor,
                   ProcessStartAttrs(child=child, cmdline=cmdline), ts,
                   planted=planted, duration=0)
        self.processes.append(child)
        return child

    def file_access(self, actor: ProcessRef, path: str, mode: str, nbytes: int,
                    options: str = "", planted: bool = False) -> RawEvent:
        return self._emit(EventType.FILE_ACCESS, actor,
                          FileAccessAttrs(path=str(path), access_mode=mode,
                                          options=str(options), bytes=nbytes),
                          self._tick(), planted, duration=int(self.rng.integers(0, 40)))

    def registry(self, actor: ProcessRef, key_path: str, value_type: str,
                 planted: bool = False) -> RawEvent:
        return self._emit(EventType.REGISTRY_ACCESS, actor,
                          RegistryAccessAttrs(key_path=key_path, value_type=value_type),
                          self._tick(), planted, duration=int(self.rng.integers(0, 8)))

    def socket(self, actor: ProcessRef, dst_ip: str, port: int, nbytes: int,
               direction: str = "out", planted: bool = False) -> RawEvent:
        return self._emit(EventType.NETWORK_CONNECTION, actor,
                          NetworkConnectionAttrs(src_ip=self.src_ip, dst_ip=dst_ip,
                                                 dst_port=port, protocol="tcp",
                                                 direction=direction, bytes=nbytes),
                          self._tick(), planted, duration=int(self.rng.integers(1, 900)))

    # --- shared vocabulary helpers ---

    def any_actor(self) -> ProcessRef:
        # head-heavy choice keeps trees shallow but branched
        if len(self.processes) == 1 or self.rng.random() < 0.55:
            return self.processes[0]
        return self.processes[int(self.rng.integers(1, len(self.processes)))]

    def user_path(self, ext: str) -> str:
        name = f"file_{int(self.rng.integers(0, 4000)):04d}{ext}"
        sub = self.rng.choice(("Documents", "Downloads", "Desktop", "Pictures"))
        return f"C:\\Users\\{self.user}\\{sub}\\{name}"

    def appdata_path(self, ext: str) -> str:
        vendor = self.rng.choice(_VENDORS)
        return (f"C:\\Users\\{self.user}\\AppData\\Roaming\\{vendor}\\"
                f"data_{int(self.rng.integers(0, 3000)):04d}{ext}")

    def temp_path(self, ext: str) -> str:
        return (f"C:\\Users\\{self.user}\\AppData\\Local\\Temp\\"
                f"tmp{int(self.rng.integers(0, 65536)):04X}{ext}")

    def external_ip(self) -> str:
        net = self.rng.choice(_EXTERNAL_NETS)
        return f"{net}{int(self.rng.integers(1, 250))}.{int(self.rng.integers(1, 250))}"

    def internal_ip(self) -> str:
        return f"{self.rng.choice(_INTERNAL_NETS)}{int(self.rng.integers(2, 250))}"

    def lognormal_bytes(self, mean: float = 9.0, sigma: float = 1.6) -> int:
        return int(self.rng.lognormal(mean, sigma)) + 64

    def startup_lnk_path(self) -> str:
        return (f"C:\\Users\\{self.user}\\AppData\\Roaming\\Microsoft\\Windows\\"
                f"Start Menu\\Programs\\Startup\\entry_{int(self.rng.integers(0, 999)):03d}.lnk")

    def noise_event(self, allow_start: bool, start_rate: float = 0.065) -> None:
        """One generic event drawn from the benign vocabulary.

        Every call emits exactly one event, so noise volume equals the
        number of calls regardless of the draws. Process creation is rolled
        apart from the rest: callers that cap creation positions can raise
        start_rate elsewhere without disturbing the mix of the other kinds.
        """
        rng = self.rng
        actor = self.any_actor()
        if rng.random() < start_rate and allow_start:
            self._noise_start(actor)
            return
        roll = rng.random()
        if roll < 0.2567:
            self.file_access(actor, self.user_path(rng.choice(_DOC_EXTS + _MEDIA_EXTS)),
                             "r", self.lognormal_bytes(), rng.choice(_OPTIONS))
        elif roll < 0.385:
            ext = rng.choice(_DATA_EXTS)
            where = self.appdata_path(ext) if rng.random() < 0.7 else self.user_path(ext)
            self.file_access(actor, where, "w", self.lognormal_bytes(8.0, 1.2),
                             rng.choice(_OPTIONS))
        elif roll < 0.5027:
            sysname = rng.choice(("kernel32.dll", "ntdll.dll", "user32.dll", "shell32.dll",
                                  "gdi32.dll", "comctl32.dll", "ws2_32.dll"))
            base = "C:\\Windows\\System32\\" if rng.random() < 0.75 else \
                f"C:\\Program Files\\{rng.choice(_VENDORS)}\\"
            self.file_access(actor, base + sysname, "r", self.lognormal_bytes(10.0, 0.8),
                             "SEQUENTIAL_SCAN")
        elif roll < 0.6203:
            vendor = rng.choice(_VENDORS)
            key = rng.choice(_REG_VENDOR_KEYS)
            self.registry(actor, f"HKCU\\Software\\{vendor}\\{key}", rng.choice(_REG_TYPES))
        elif roll < 0.6631:
            # proxy and zone lookups are routine for anything speaking HTTP
            self.registry(
                actor, "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\"
                + rng.choice(("ProxyEnable", "ProxyServer", "ZoneMap\\Domains", "Connections")),
                rng.choice(("REG_DWORD", "REG_SZ")))
        elif roll < 0.7166:
            self.socket(actor, self.internal_ip(), int(rng.choice((445, 139, 135, 53))),
                        self.lognormal_bytes(7.0, 1.0),
                        direction="out" if rng.random() < 0.8 else "in")
        elif roll < 0.8021:
            self.socket(actor, self.external_ip(), int(rng.choice(_COMMON_PORTS)),
                        self.lognormal_bytes())
        elif roll < 0.8182:
            # indexers and backup agents sweep credential stores too
            self.file_access(actor, f"C:\\Users\\{self.user}\\{rng.choice(_SENSITIVE_PATHS)}",
                             "r", self.lognormal_bytes(8.0, 0.7),
                             rng.choice(("RANDOM_ACCESS", "BACKUP_SEMANTICS")))
        elif roll < 0.8342:
            name = _tool_name(rng)
            r = rng.random()
            folder = ("AppData\\Local\\Temp" if r < 0.45 else
                      "Downloads" if r < 0.75 else
                      f"AppData\\Roaming\\{rng.choice(_VENDORS)}")
            self.pending_exe = f"C:\\Users\\{self.user}\\{folder}\\{name}"
            self.file_access(actor, self.pending_exe, "w",
                             self.lognormal_bytes(12.0, 1.0), "WRITE_THROUGH")
        elif roll < 0.8717:
            self.file_access(actor, self.temp_path(rng.choice(_DATA_EXTS)), "w",
                             self.lognormal_bytes(7.5, 1.0), rng.choice(_OPTIONS))
        elif roll < 0.9037:
            if self.pending_exe is not None and rng.random() < 0.5:
                self.file_access(actor, self.pending_exe, "d", 0, "DELETE_ON_CLOSE")
                self.pending_exe = None
            else:
                self.file_access(actor, self.temp_path(".tmp"), "w",
                                 self.lognormal_bytes(6.0, 0.8), "DELETE_ON_CLOSE")
        else:
            self.registry(actor, f"HKLM\\Software\\{rng.choice(_VENDORS)}\\Install",
                          rng.choice(_REG_TYPES))

    def _noise_start(self, actor: ProcessRef) -> None:
        rng = self.rng
        sub = rng.random()
        if sub < 0.16:
            browser = rng.choice(_BROWSERS)
            self.start_process(
                actor, f"C:\\Program Files\\{browser[:-4].capitalize()}\\{browser}",
                f"{browser} --type={rng.choice(('utility', 'gpu-process', 'renderer'))}")
        elif sub < 0.28:
            if self.pending_exe is not None and rng.random() < 0.3:
                cmdline = _del_cmdline(rng, self.pending_exe)
            else:
                cmdline = rng.choice((
                    _del_cmdline(rng, self.temp_path(rng.choice((".tmp", ".log", ".old")))),
                    f"cmd.exe /c copy \"{self.user_path('.csv')}\" \\\\fileserver\\share\\backup.csv",
                    "cmd.exe /c ver > nul",
                    f"cmd.exe /c type \"{self.temp_path('.log')}\" > nul",
                ))
            self.start_process(actor, "C:\\Windows\\System32\\cmd.exe", cmdline)
        elif sub < 0.38:
            self.start_process(
                actor, "C:\\Windows\\System32\\windowspowershell\\v1.0\\powershell.exe",
                f"powershell.exe -NoProfile -Command \"{rng.choice(_PS_ONELINERS)}\"")
        elif sub < 0.60 and self.pending_exe is not None:
            name = self.pending_exe.rsplit("\\", 1)[-1]
            self.start_process(actor, self.pending_exe,
                               f"{name} {rng.choice(_INSTALL_FLAGS)}")
            self.pending_exe = None
        elif sub < 0.70:
            app = rng.choice(_DESKTOP_APPS)
            self.start_process(actor, f"C:\\Program Files\\{rng.choice(_VENDORS)}\\{app}",
                               f"{app} {rng.choice(('', '--restored', '-session last'))}".strip())
        else:
            helper = rng.choice(_HELPER_NAMES)
            base = rng.choice((f"C:\\Program Files\\{rng.choice(_VENDORS)}\\",
                               f"C:\\Users\\{self.user}\\AppData\\Roaming\\{rng.choice(_VENDORS)}\\"))
            flags = rng.choice(_SERVICE_FLAGS)
            self.start_process(actor, base + helper, f"{helper} {flags}".strip())


def _hashy_name(rng: np.random.Generator) -> str:
    return "".join(rng.choice(list("ABCDEFGHKLMNPRSTUVWXYZ"), size=4)) + \
        f"_{int(rng.integers(10, 99))}"


def _tool_name(rng: np.random.Generator) -> str:
    if rng.random() < 0.4:
        return f"{_hashy_name(rng)}.exe"
    return f"{rng.choice(_TOOL_STEMS)}_{int(rng.integers(10, 99))}.exe"


def _del_cmdline(rng: np.random.Generator, path: str) -> str:
    """Shell delete one-liner. The delayed variants are the classic installer
    self-cleanup trick, used by legitimate software and malware alike."""
    roll = rng.random()
    if roll < 0.4:
        return f'cmd.exe /c del "{path}"'
    if roll < 0.75:
        return (f"cmd.exe /c ping 127.0.0.1 -n {int(rng.integers(3, 15))} > nul"
                f' & del "{path}"')
    return f'cmd.exe /c timeout /t {int(rng.integers(2, 10))} >nul & del "{path}"'


# --- template chains: lists of zero-argument steps over a session ---


def _downloaded_tool_steps(s: "_Session", n_writes: tuple[int, int],
                           run_key_p: float, cleanup_p: float) -> list:
    """User downloads a small installer and runs it; it settles into AppData."""
    rng = s.rng
    state: dict = {}
    vendor = rng.choice(_VENDORS)
    name = (f"{_hashy_name(rng)}.exe" if rng.random() < 0.5
            else f"setup_{vendor.lower()}_{int(rng.integers(10, 99))}.exe")
    folder = ("Downloads" if rng.random() < 0.6 else "AppData\\Local\\Temp")
    tool_path = f"C:\\Users\\{s.user}\\{folder}\\{name}"
    steps = [lambda: s.file_access(s.head, tool_path, "w",
                                   s.lognormal_bytes(12.5, 0.8), "WRITE_THROUGH")]

    def run_tool():
        state["proc"] = s.start_process(
            s.head, tool_path, f"{name} {rng.choice(_INSTALL_FLAGS)}")
    steps.append(run_tool)
    for _ in range(int(rng.integers(*n_writes))):
        steps.append(lambda: s.file_access(
            state.get("proc", s.head), s.appdata_path(rng.choice((".dat", ".dll", ".cfg"))),
            "w", s.lognormal_bytes(10.5, 1.0), "SEQUENTIAL_SCAN"))
    if rng.random() < 0.5:
        # squirrel-style: copy itself under Roaming and relaunch from there
        settled = f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}\\{name}"
        steps.append(lambda: s.file_access(state.get("proc", s.head), settled, "w",
                                           s.lognormal_bytes(12.0, 0.6), "WRITE_THROUGH"))
        steps.append(lambda: s.start_process(
            state.get("proc", s.head), settled,
            f"{name} {rng.choice(_SERVICE_FLAGS)}".strip()))
        if rng.random() < 0.5:
            steps.append(lambda: s.file_access(
                state.get("proc", s.head), s.startup_lnk_path(), "w",
                int(rng.integers(1400, 2600)), f"WRITE_THROUGH target={settled}"))
    if rng.random() < run_key_p:
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            f"HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\{vendor}Agent",
            "REG_SZ"))
    roll = rng.random()
    if roll < cleanup_p / 2:
        def cleanup_cmd():
            state["cmd"] = s.start_process(state.get("proc", s.head),
                                           "C:\\Windows\\System32\\cmd.exe",
                                           _del_cmdline(rng, tool_path))
        steps.append(cleanup_cmd)
        steps.append(lambda: s.file_access(state.get("cmd", s.head), tool_path, "d", 0,
                                           "DELETE_ON_CLOSE"))
    elif roll < cleanup_p:
        steps.append(lambda: s.file_access(state.get("proc", s.head), tool_path, "d", 0,
                                           "DELETE_ON_CLOSE"))
    return steps

def _browser_chain(s: _Session) -> list:
    rng = s.rng
    steps = []
    n_children = int(rng.integers(2, 5))
    browser = s.head.exe_path
    browser_name = s.head.exe_name

    def renderer():
        s.start_process(s.head, browser,
                        f"{browser_name} --type=renderer --lang=en-US "
                        f"--field-trial={int(rng.integers(100, 999))}")
    steps += [renderer] * n_children
    for _ in range(int(rng.integers(4, 21))):
        steps.append(lambda: s.file_access(
            s.head, f"C:\\Users\\{s.user}\\{rng.choice(_SENSITIVE_PATHS)}", "r",
            s.lognormal_bytes(8.0, 0.7), "RANDOM_ACCESS"))
    for _ in range(int(rng.integers(12, 41))):
        steps.append(lambda: s.socket(s.any_actor(), s.external_ip(),
                                      int(rng.choice(_COMMON_PORTS)), s.lognormal_bytes()))
    for _ in range(int(rng.integers(2, 7))):
        steps.append(lambda: s.registry(
            s.head, "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\"
            + rng.choice(("ProxyEnable", "ProxyServer", "ZoneMap\\Domains")),
            rng.choice(("REG_DWORD", "REG_SZ"))))
    for _ in range(int(rng.integers(1, 5))):
        steps.append(lambda: s.file_access(
            s.head, s.user_path(rng.choice((".pdf", ".zip", ".docx", ".png"))), "w",
            s.lognormal_bytes(11.0, 1.2), "SEQUENTIAL_SCAN|WRITE_THROUGH"))
    if rng.random() < 0.4:
        steps += _downloaded_tool_steps(s, n_writes=(2, 6), run_key_p=0.25, cleanup_p=0.6)
    return steps


def _office_chain(s: _Session) -> list:
    rng = s.rng
    steps = []
    for _ in range(int(rng.integers(1, 3))):
        sibling = rng.choice(_OFFICE)
        steps.append(lambda sib=sibling: s.start_process(
            s.head, f"C:\\Program Files\\Microsoft Office\\{sib}",
            f"{sib} /n C:\\Users\\{s.user}\\Documents\\doc_{int(rng.integers(100, 999))}.docx"))
    for _ in range(int(rng.integers(6, 26))):
        steps.append(lambda: s.file_access(s.any_actor(), s.user_path(rng.choice(_DOC_EXTS)),
                                           "r", s.lognormal_bytes(9.5, 1.0),
                                           rng.choice(_OPTIONS)))
    for _ in range(int(rng.integers(2, 9))):
        steps.append(lambda: s.file_access(s.any_actor(), s.user_path(rng.choice(_DOC_EXTS)),
                                           "w", s.lognormal_bytes(9.5, 1.0),
                                           "WRITE_THROUGH"))
    for _ in range(int(rng.integers(2, 7))):
        steps.append(lambda: s.file_access(s.head, s.temp_path(".tmp"), "w",
                                           s.lognormal_bytes(8.0, 0.6), "DELETE_ON_CLOSE"))
    for _ in range(int(rng.integers(0, 6))):
        steps.append(lambda: s.socket(s.head, s.external_ip(), 443, s.lognormal_bytes()))
    if rng.random() < 0.25:
        steps.append(lambda: s.start_process(
            s.head, "C:\\Windows\\System32\\cmd.exe",
            f"cmd.exe /c copy C:\\Users\\{s.user}\\Documents\\export.csv "
            f"\\\\fileserver\\share\\export.csv"))
    if rng.random() < 0.4:
        steps.append(lambda: s.registry(
            s.head, "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\Connections",
            "REG_BINARY"))
    if rng.random() < 0.2:
        steps += _downloaded_tool_steps(s, n_writes=(1, 4), run_key_p=0.15, cleanup_p=0.6)
    return steps


def _updater_chain(s: _Session) -> list:
    """Benign updater: drops, starts, registers and removes an installer.

    Half the installs are per-user: the refreshed app binary lands under
    AppData and the autostart entries point at it.
    """
    rng = s.rng
    state: dict = {}
    vendor = rng.choice(_VENDORS)
    hashy = rng.random() < 0.5
    installer_name = (f"{_hashy_name(rng)}.exe" if hashy
                      else f"setup_{vendor.lower()}_{int(rng.integers(10, 99))}.exe")
    if rng.random() < 0.6:
        installer_path = f"C:\\Users\\{s.user}\\AppData\\Local\\Temp\\{installer_name}"
    else:
        installer_path = f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}\\{installer_name}"
    per_user = rng.random() < 0.45
    install_dir = (f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}" if per_user
                   else f"C:\\Program Files\\{vendor}")
    app_exe = f"{install_dir}\\{vendor.lower()}.exe"
    steps = []
    for _ in range(int(rng.integers(1, 4))):
        steps.append(lambda: s.socket(s.head, s.external_ip(), 443,
                                      s.lognormal_bytes(12.0, 1.0), direction="in"))
    steps.append(lambda: s.file_access(s.head, installer_path, "w",
                                       s.lognormal_bytes(13.0, 0.8), "WRITE_THROUGH"))

    def start_installer():
        state["proc"] = s.start_process(
            s.head, installer_path,
            f"{installer_name} {rng.choice(_INSTALL_FLAGS)}")
    steps.append(start_installer)
    for _ in range(int(rng.integers(3, 11))):
        steps.append(lambda: s.file_access(
            state.get("proc", s.head),
            f"{install_dir}\\{rng.choice(('core', 'lib', 'res'))}"
            f"_{int(rng.integers(0, 99)):02d}{rng.choice(('.dll', '.dat', '.cfg'))}",
            "w", s.lognormal_bytes(11.0, 1.0), "SEQUENTIAL_SCAN"))
    if per_user:
        steps.append(lambda: s.file_access(state.get("proc", s.head), app_exe, "w",
                                           s.lognormal_bytes(12.0, 0.8), "WRITE_THROUGH"))
        if rng.random() < 0.6:
            agent_exe = f"{install_dir}\\{vendor.lower()}agent_{int(rng.integers(10, 99))}.exe"
            steps.append(lambda: s.file_access(state.get("proc", s.head), agent_exe, "w",
                                               s.lognormal_bytes(12.0, 0.6), "WRITE_THROUGH"))
            steps.append(lambda: s.start_process(
                state.get("proc", s.head), agent_exe,
                f"{agent_exe.rsplit(chr(92), 1)[-1]} {rng.choice(_SERVICE_FLAGS)}".strip()))
    steps.append(lambda: s.registry(
        state.get("proc", s.head),
        f"HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Uninstall\\{vendor}",
        "REG_SZ"))
    if rng.random() < (0.55 if per_user else 0.4):
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            f"HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\{vendor}Update",
            "REG_SZ"))
    if rng.random() < (0.4 if per_user else 0.3):
        steps.append(lambda: s.file_access(s.head, s.startup_lnk_path(), "w",
                                           int(rng.integers(1400, 2600)),
                                           f"WRITE_THROUGH target={app_exe}"))
    if rng.random() < 0.18:
        # endpoint agents still register winlogon notification hooks
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            "HKLM\\Software\\Microsoft\\Windows NT\\CurrentVersion\\Winlogon\\Notify\\"
            + vendor.lower()[:3], "REG_BINARY"))
    if not per_user and rng.random() < 0.15:
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            f"HKLM\\System\\CurrentControlSet\\Services\\{vendor}Svc", "REG_EXPAND_SZ"))
    if rng.random() < (0.7 if per_user else 0.5):
        steps.append(lambda: s.start_process(
            state.get("proc", s.head), app_exe,
            f"{vendor.lower()}.exe {rng.choice(_SERVICE_FLAGS)}".strip()))
    cleanup = rng.random()
    if cleanup < 0.45:
        steps.append(lambda: s.file_access(s.head, installer_path, "d", 0, "DELETE_ON_CLOSE"))
    elif cleanup < 0.75:
        def cleanup_cmd():
            state["cmd"] = s.start_process(state.get("proc", s.head),
                                           "C:\\Windows\\System32\\cmd.exe",
                                           _del_cmdline(rng, installer_path))
        steps.append(cleanup_cmd)
        steps.append(lambda: s.file_access(state.get("cmd", s.head), installer_path,
                                           "d", 0, "DELETE_ON_CLOSE"))
    return steps


def _infostealer_chain(s: _Session) -> list:
    """Drop and start a payload, sweep credential stores, exfiltrate, self-delete."""
    rng = s.rng
    state: dict = {}
    name = _tool_name(rng)
    vendor = rng.choice(_VENDORS)
    payload_path = (f"C:\\Users\\{s.user}\\AppData\\Local\\Temp\\{name}"
                    if rng.random() < 0.4 else
                    f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}\\{name}")
    exfil_ip = s.external_ip()
    steps = [
        lambda: s.file_access(s.head, payload_path, "w", s.lognormal_bytes(12.5, 0.5),
                              "WRITE_THROUGH"),
    ]

    def start_payload():
        state["proc"] = s.start_process(
            s.head, payload_path,
            f"{name} {rng.choice(_INSTALL_FLAGS + _SERVICE_FLAGS)}".strip(), planted=True)
    steps.append(start_payload)
    for _ in range(int(rng.integers(1, 4))):
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\"
            + rng.choice(("ProxyEnable", "ProxyServer")), "REG_DWORD"))
    for _ in range(int(rng.integers(6, 15))):
        steps.append(lambda: s.file_access(
            state.get("proc", s.head),
            f"C:\\Users\\{s.user}\\{rng.choice(_SENSITIVE_PATHS)}", "r",
            s.lognormal_bytes(8.0, 0.7), "RANDOM_ACCESS", planted=True))
    for _ in range(int(rng.integers(3, 9))):
        steps.append(lambda: s.socket(state.get("proc", s.head), exfil_ip,
                                      int(rng.choice((443, 443, 8080))),
                                      s.lognormal_bytes(10.5, 1.2), planted=True))

    def self_delete_cmd():
        state["cmd"] = s.start_process(
            state.get("proc", s.head), "C:\\Windows\\System32\\cmd.exe",
            _del_cmdline(rng, payload_path), planted=True)
    steps.append(self_delete_cmd)
    steps.append(lambda: s.file_access(state.get("cmd", s.head), payload_path, "d", 0,
                                       "DELETE_ON_CLOSE", planted=True))
    return steps


def _dropper_chain(s: _Session) -> list:
    """Drop a payload, persist it via startup artifacts, check in with C&C."""
    rng = s.rng
    state: dict = {}
    vendor = rng.choice(_VENDORS)
    name = _tool_name(rng)
    staged = f"C:\\Users\\{s.user}\\AppData\\Local\\Temp\\{name}"
    persisted = f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}\\{name}"
    cnc_ip = s.external_ip()
    steps = [
        lambda: s.file_access(s.head, staged, "w", s.lognormal_bytes(12.0, 0.6),
                              "WRITE_THROUGH"),
    ]

    def start_staged():
        state["proc"] = s.start_process(
            s.head, staged, f"{name} {rng.choice(_INSTALL_FLAGS)}", planted=True)
    steps.append(start_staged)
    steps.append(lambda: s.file_access(state.get("proc", s.head), persisted, "w",
                                       s.lognormal_bytes(12.0, 0.6), "WRITE_THROUGH"))
    if rng.random() < 0.75:
        steps.append(lambda: s.file_access(
            state.get("proc", s.head), s.startup_lnk_path(), "w",
            int(rng.integers(1400, 2600)),
            f"WRITE_THROUGH target={persisted}", planted=True))
    steps.append(lambda: s.registry(
        state.get("proc", s.head),
        f"HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\{vendor}Agent",
        "REG_SZ", planted=True))
    if rng.random() < 0.4:
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            "HKLM\\Software\\Microsoft\\Windows NT\\CurrentVersion\\Winlogon\\Notify\\agt",
            "REG_BINARY", planted=True))

    def start_persisted():
        state["svc"] = s.start_process(
            state.get("proc", s.head), persisted,
            f"{name} {rng.choice(_SERVICE_FLAGS)}".strip(), planted=True)
    steps.append(start_persisted)
    for _ in range(int(rng.integers(2, 6))):
        steps.append(lambda: s.socket(state.get("svc", s.head), cnc_ip,
                                      int(rng.choice((443, 8080))),
                                      s.lognormal_bytes(8.0, 1.2), planted=True))
    if rng.random() < 0.6:
        steps.append(lambda: s.file_access(state.get("proc", s.head), staged, "d", 0,
                                           "", planted=True))
    return steps


def _beacon_chain(s: _Session) -> list:
    """Dropped implant polling one external host with small messages."""
    rng = s.rng
    state: dict = {}
    name = _tool_name(rng)
    vendor = rng.choice(_VENDORS)
    path = f"C:\\Users\\{s.user}\\AppData\\Roaming\\{vendor}\\{name}"
    cnc_ip = s.external_ip()
    port = int(rng.choice((443, 8080, 443)))
    steps = [
        lambda: s.file_access(s.head, path, "w", s.lognormal_bytes(12.0, 0.5),
                              "WRITE_THROUGH"),
    ]

    def start_implant():
        state["proc"] = s.start_process(
            s.head, path, f"{name} {rng.choice(_SERVICE_FLAGS)}".strip(), planted=True)
    steps.append(start_implant)
    if rng.random() < 0.3:
        steps.append(lambda: s.start_process(
            state.get("proc", s.head),
            "C:\\Windows\\System32\\windowspowershell\\v1.0\\powershell.exe",
            f"powershell.exe -NoProfile -Command \"{rng.choice(_PS_ONELINERS)}\""))
    for _ in range(int(rng.integers(2, 5))):
        steps.append(lambda: s.registry(
            state.get("proc", s.head),
            "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\"
            + rng.choice(("ProxyEnable", "ProxyServer")), "REG_DWORD"))
    for _ in range(int(rng.integers(10, 23))):
        steps.append(lambda: s.socket(state.get("proc", s.head), cnc_ip, port,
                                      s.lognormal_bytes(8.0, 1.2), planted=True))
    return steps


_BENIGN_HEADS = {
    "browser-session": _BROWSERS,
    "office-session": _OFFICE,
    "updater": _UPDATERS,
}
_BENIGN_CHAINS = {
    "browser-session": _browser_chain,
    "office-session": _office_chain,
    "updater": _updater_chain,
}
def _cover_steps(s: _Session) -> list:
    """Ordinary foreground activity for an infected session.

    A compromised browser still browses and a compromised office host still
    edits documents, so malicious sessions carry the same read/write/socket
    texture as clean ones. Keeps process creations out of it: those are
    emitted by the noise schedule, which caps their sequence positions.
    """
    rng = s.rng
    steps = []
    if s.head.exe_name in _BROWSERS:
        for _ in range(int(rng.integers(3, 14))):
            steps.append(lambda: s.file_access(
                s.head, f"C:\\Users\\{s.user}\\{rng.choice(_SENSITIVE_PATHS)}", "r",
                s.lognormal_bytes(8.0, 0.7), "RANDOM_ACCESS"))
        for _ in range(int(rng.integers(8, 28))):
            steps.append(lambda: s.socket(s.any_actor(), s.external_ip(),
                                          int(rng.choice(_COMMON_PORTS)), s.lognormal_bytes()))
        for _ in range(int(rng.integers(1, 5))):
            steps.append(lambda: s.registry(
                s.head, "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Internet Settings\\"
                + rng.choice(("ProxyEnable", "ProxyServer", "ZoneMap\\Domains")),
                rng.choice(("REG_DWORD", "REG_SZ"))))
        for _ in range(int(rng.integers(0, 4))):
            steps.append(lambda: s.file_access(
                s.head, s.user_path(rng.choice((".pdf", ".zip", ".docx", ".png"))), "w",
                s.lognormal_bytes(11.0, 1.2), "SEQUENTIAL_SCAN|WRITE_THROUGH"))
    else:
        for _ in range(int(rng.integers(4, 18))):
            steps.append(lambda: s.file_access(s.any_actor(), s.user_path(rng.choice(_DOC_EXTS)),
                                               "r", s.lognormal_bytes(9.5, 1.0),
                                               rng.choice(_OPTIONS)))
        for _ in range(int(rng.integers(1, 6))):
            steps.append(lambda: s.file_access(s.any_actor(), s.user_path(rng.choice(_DOC_EXTS)),
                                               "w", s.lognormal_bytes(9.5, 1.0),
                                               "WRITE_THROUGH"))
        for _ in range(int(rng.integers(1, 5))):
            steps.append(lambda: s.file_access(s.head, s.temp_path(".tmp"), "w",
                                               s.lognormal_bytes(8.0, 0.6), "DELETE_ON_CLOSE"))
        for _ in range(int(rng.integers(0, 5))):
            steps.append(lambda: s.socket(s.head, s.external_ip(), 443, s.lognormal_bytes()))
    return steps


_MALICIOUS_CHAINS = {
    "infostealer": _infostealer_chain,
    "persistence-dropper": _dropper_chain,
    "cnc-beacon": _beacon_chain,
}

# process creations in malicious sessions stay below this sequence index so
# one anchored 200-event window covers the whole chain
_MAL_START_CEILING = 150
# chain events spread over at least this many positions (short-window fragmenting)
_MIN_CHAIN_SPAN = 60


def _head_for(template: str, label: str, rng: np.random.Generator) -> tuple[str, str]:
    if label == BENIGN:
        pool = _BENIGN_HEADS[template]
    else:
        pool = _BROWSERS + _OFFICE  # infected hosts look ordinary
    name = rng.choice(pool)
    if name in _BROWSERS:
        base = f"C:\\Program Files\\{name[:-4].capitalize()}\\{name}"
        cmd = f"{name} --profile-directory=Default"
    elif name in _OFFICE:
        base = f"C:\\Program Files\\Microsoft Office\\{name}"
        cmd = f"{name} /n"
    else:
        vendor = rng.choice(_VENDORS)
        base = f"C:\\Program Files\\{vendor}\\{name}"
        cmd = f"{name} --check-now"
    return base, cmd


def _pick_template(rng: np.random.Generator, mix: dict[str, float], known: tuple) -> str:
    names = [t for t in known if mix.get(t, 0) > 0]
    weights = np.array([mix[t] for t in names], dtype=np.float64)
    return names[int(rng.choice(len(names), p=weights / weights.sum()))]


def _generate_graph(cfg: SynthConfig, graph_index: int, label: str) -> tuple[list[RawEvent], GraphTruth]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, graph_index))))
    base_time = 1_700_000_000_000 + graph_index * 3_600_000
    session = _Session(rng, graph_index, base_time)

    if label == BENIGN:
        template = _pick_template(rng, cfg.benign_template_mix, BENIGN_TEMPLATES)
    else:
        template = _pick_template(rng, cfg.malicious_template_mix, MALICIOUS_TEMPLATES)
    head_path, head_cmd = _head_for(template, label, rng)
    head = session.start_head(head_path, head_cmd)

    lo, hi = cfg.noise_events_range
    n_noise = int(rng.integers(lo, hi + 1))
    chain = (_BENIGN_CHAINS[template](session) if label == BENIGN
             else _MALICIOUS_CHAINS[template](session))
    cover = _cover_steps(session) if label == MALICIOUS and rng.random() < 0.65 else []
    total = n_noise + len(chain) + len(cover)

    if label == BENIGN:
        chain_positions = set(rng.choice(total, size=len(chain), replace=False).tolist())
    else:
        # confine the chain to the first anchored window, spread wide enough
        # that no 50-event window covers all of it
        bound = min(total, 190)
        if bound <= len(chain):
            positions = np.arange(len(chain))
        else:
            width = min(bound, max(_MIN_CHAIN_SPAN, len(chain)))
            offset = int(rng.integers(0, bound - width + 1))
            positions = offset + np.sort(rng.choice(width, size=len(chain), replace=False))
        chain_positions = set(int(p) for p in positions)

    cover_positions: set[int] = set()
    if cover:
        free = np.array([p for p in range(total) if p not in chain_positions])
        cover_positions = set(rng.choice(free, size=len(cover), replace=False).tolist())

    chain_iter = iter(chain)
    cover_iter = iter(cover)
    for position in range(total):
        if position in chain_positions:
            next(chain_iter)()
        elif position in cover_positions:
            next(cover_iter)()
        else:
            allow_start = label == BENIGN or position < _MAL_START_CEILING
            # creations sit below the ceiling in malicious sessions; the
            # higher rate keeps the per-window creation count comparable
            rate = 0.065 if label == BENIGN else 0.065 * 4 / 3
            session.noise_event(allow_start, start_rate=rate)

    truth = GraphTruth(
        head_pid=head.pid,
        head_start_time=head.start_time,
        head_exe_path=head.exe_path,
        label=label,
        template=template,
        planted_event_ids=tuple(sorted(session.planted)),
    )
    return session.events, truth


def generate_synthetic_corpus(cfg: SynthConfig) -> tuple[EventLog, GroundTruth]:
    """Deterministic corpus: first the benign graphs, then the malicious ones."""
    events: list[RawEvent] = []
    truths: list[GraphTruth] = []
    for i in range(cfg.n_benign_graphs):
        graph_events, truth = _generate_graph(cfg, i, BENIGN)
        events.extend(graph_events)
        truths.append(truth)
    for j in range(cfg.n_malicious_graphs):
        graph_events, truth = _generate_graph(cfg, cfg.n_benign_graphs + j, MALICIOUS)
        events.extend(graph_events)
        truths.append(truth)
    return make_log(events), GroundTruth(entries=tuple(truths))
