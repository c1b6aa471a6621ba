"""Rule-based user behaviour evaluation.

Four binary security parameters are computed from a user's access history,
authorization set and current request: unknown history, unauthorized
target, attack factor over threshold and unauthorized-access frequency over
threshold. Their sum decides the intent of the request.
"""
from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable

Id = Hashable


class Intent(enum.IntEnum):
    NON_MALICIOUS = 0
    MALICIOUS = 1


@dataclass(frozen=True)
class AccessRecord:
    data_id: Id
    category_id: Id
    timestamp: int
    authorized: bool = True
    leaked: bool = False

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True)
class UserHistory:
    user_id: Id
    records: tuple[AccessRecord, ...] = ()

    def __post_init__(self):
        recs = tuple(self.records)
        if any(a.timestamp > b.timestamp for a, b in zip(recs, recs[1:])):
            raise ValueError(f"history of {self.user_id!r} is not sorted by timestamp")
        object.__setattr__(self, "records", recs)

    def appended(self, record: AccessRecord) -> "UserHistory":
        return UserHistory(self.user_id, self.records + (record,))

    @property
    def last_timestamp(self) -> int | None:
        return self.records[-1].timestamp if self.records else None


@dataclass(frozen=True)
class AuthorizationSet:
    entries: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "entries", frozenset(self.entries))

    def allows(self, category_id: Id, data_id: Id) -> bool:
        return (category_id, data_id) in self.entries


@dataclass(frozen=True)
class AccessRequest:
    user_id: Id
    data_id: Id
    category_id: Id
    timestamp: int


@dataclass(frozen=True)
class TimeWindow:
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"window start {self.start} after end {self.end}")

    def __contains__(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class SecurityThresholds:
    thr_attack: float = 0.5
    thr_freq: float = 0.3

    def __post_init__(self):
        for name in ("thr_attack", "thr_freq"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class RiskRecord:
    user_id: Id
    data_id: Id
    intent: Intent
    window: TimeWindow


PARAMETER_NAMES = ("history", "authorized", "attack", "leak")


@dataclass(frozen=True)
class SecurityAssessment:
    flags: tuple[int, ...]
    attack_factor: float
    leak_frequency: float
    intent: Intent
    risk_record: RiskRecord
    names: tuple[str, ...] = PARAMETER_NAMES

    @property
    def sigma_total(self) -> int:
        return sum(self.flags)

    def flag(self, name: str) -> int:
        return self.flags[self.names.index(name)]

    @property
    def sigma_history(self) -> int:
        return self.flag("history")

    @property
    def sigma_authorized(self) -> int:
        return self.flag("authorized")

    @property
    def sigma_attack(self) -> int:
        return self.flag("attack")

    @property
    def sigma_leak(self) -> int:
        return self.flag("leak")


def history_status(history: UserHistory) -> int:
    """0 for a known user (any past access), 1 for an unknown one."""
    return 0 if len(history.records) > 0 else 1


def authorization_status(request: AccessRequest, auth: AuthorizationSet) -> int:
    return 0 if auth.allows(request.category_id, request.data_id) else 1


def _in_window(history: UserHistory, window: TimeWindow) -> list[AccessRecord]:
    return [r for r in history.records if r.timestamp in window]


def malicious_distribution_count(history: UserHistory, window: TimeWindow) -> int:
    return sum(1 for r in _in_window(history, window) if r.leaked)


def attack_factor(dd_mal: int, da_total: int) -> float:
    """Leaked share of accesses; 0 when there were no accesses at all."""
    if dd_mal < 0 or da_total < 0:
        raise ValueError("counts must be non-negative")
    if dd_mal > da_total:
        raise ValueError(f"{dd_mal} malicious distributions out of only {da_total} accesses")
    return dd_mal / da_total if da_total else 0.0


def attack_flag(kappa: float, thresholds: SecurityThresholds) -> int:
    return 0 if thresholds.thr_attack > kappa else 1


def leak_frequency(history: UserHistory, auth: AuthorizationSet, window: TimeWindow) -> float:
    """Share of in-window accesses that targeted data outside `auth`."""
    recent = _in_window(history, window)
    if not recent:
        return 0.0
    unauthorized = sum(1 for r in recent if not auth.allows(r.category_id, r.data_id))
    return unauthorized / len(recent)


def leak_flag(freq: float, thresholds: SecurityThresholds) -> int:
    return 0 if thresholds.thr_freq > freq else 1


def assess(
    request: AccessRequest,
    history: UserHistory,
    auth: AuthorizationSet,
    window: TimeWindow,
    thresholds: SecurityThresholds = SecurityThresholds(),
) -> SecurityAssessment:
    if history.user_id != request.user_id:
        raise ValueError(f"history of {history.user_id!r} given for request by {request.user_id!r}")
    last = history.last_timestamp
    if last is not None and request.timestamp < last:
        raise ValueError(f"request at t={request.timestamp} predates history (t={last})")
    kappa = attack_factor(
        malicious_distribution_count(history, window),
        len(_in_window(history, window)),
    )
    freq = leak_frequency(history, auth, window)
    flags = (
        history_status(history),
        authorization_status(request, auth),
        attack_flag(kappa, thresholds),
        leak_flag(freq, thresholds),
    )
    intent = Intent.NON_MALICIOUS if sum(flags) < 1 else Intent.MALICIOUS
    return SecurityAssessment(
        flags=flags,
        attack_factor=kappa,
        leak_frequency=freq,
        intent=intent,
        risk_record=RiskRecord(request.user_id, request.data_id, intent, window),
    )


# --- knowledge base -----------------------------------------------------------

KB_HEADER = ("user_id", "kind", "category_id", "data_id", "timestamp", "authorized", "leaked")


@dataclass
class KnowledgeBase:
    """Per-user access histories and authorization sets.

    Users without any rows get an empty history and an empty authorization
    set; an unknown user is not an error.
    """

    histories: dict = field(default_factory=dict)
    authorizations: dict = field(default_factory=dict)

    def history(self, user_id: Id) -> UserHistory:
        return self.histories.get(user_id, UserHistory(user_id))

    def authorization(self, user_id: Id) -> AuthorizationSet:
        return self.authorizations.get(user_id, AuthorizationSet())

    def record(self, user_id: Id, record: AccessRecord) -> None:
        self.histories[user_id] = self.history(user_id).appended(record)


def _flag(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no", ""):
        return False
    raise ValueError(f"{where}: expected a 0/1 flag, got {text!r}")


def load_knowledge_base(path: str | Path) -> KnowledgeBase:
    """Read a knowledge-base CSV.

    Columns: ``user_id,kind,category_id,data_id,timestamp,authorized,leaked``.
    ``kind`` is ``access`` (one past access, ordered by timestamp per user)
    or ``grant`` (one authorization entry; timestamp and flags ignored).
    """
    path = Path(path)
    records: dict = defaultdict(list)
    grants: dict = defaultdict(set)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(KB_HEADER):
            raise ValueError(f"{path}: knowledge-base header must be {','.join(KB_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            where = f"{path}:{line_no}"
            user, kind = row["user_id"].strip(), row["kind"].strip()
            cat, data = row["category_id"].strip(), row["data_id"].strip()
            if kind == "grant":
                grants[user].add((cat, data))
            elif kind == "access":
                try:
                    ts = int(row["timestamp"])
                except ValueError:
                    raise ValueError(f"{where}: bad timestamp {row['timestamp']!r}") from None
                records[user].append(
                    AccessRecord(data, cat, ts, _flag(row["authorized"], where), _flag(row["leaked"], where))
                )
            else:
                raise ValueError(f"{where}: kind must be 'access' or 'grant', got {kind!r}")
    kb = KnowledgeBase()
    for user, recs in records.items():
        kb.histories[user] = UserHistory(user, tuple(sorted(recs, key=lambda r: r.timestamp)))
    for user, entries in grants.items():
        kb.authorizations[user] = AuthorizationSet(frozenset(entries))
    return kb


def save_knowledge_base(kb: KnowledgeBase, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KB_HEADER)
        for user in sorted(kb.authorizations, key=str):
            for cat, data in sorted(kb.authorizations[user].entries, key=str):
                writer.writerow([user, "grant", cat, data, "", "", ""])
        for user in sorted(kb.histories, key=str):
            for r in kb.histories[user].records:
                writer.writerow([user, "access", r.category_id, r.data_id, r.timestamp,
                                 int(r.authorized), int(r.leaked)])
