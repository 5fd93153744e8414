"""Policies over the flow header: domains, priorities, per-ingress paths.

Domains are finite unions of closed integer intervals so that intersection
and emptiness are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

WORLD = "World"
DROP = "Drop"
TERMINALS = (WORLD, DROP)


class ContractError(Exception):
    """Raised when a caller violates a documented precondition."""


def _normalize(intervals: Iterable[Sequence[int]]) -> tuple[tuple[int, int], ...]:
    spans = sorted((int(lo), int(hi)) for lo, hi in intervals if lo <= hi)
    out: list[list[int]] = []
    for lo, hi in spans:
        if lo < 0:
            raise ValueError(f"flow values are non-negative, got interval [{lo}, {hi}]")
        if out and lo <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return tuple((lo, hi) for lo, hi in out)


@dataclass(frozen=True)
class Domain:
    intervals: tuple[tuple[int, int], ...] = ()

    @classmethod
    def of(cls, *intervals: Sequence[int]) -> "Domain":
        return cls(_normalize(intervals))

    def __contains__(self, flow: int) -> bool:
        return any(lo <= flow <= hi for lo, hi in self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals

    def intersect(self, other: "Domain") -> "Domain":
        out = []
        for a_lo, a_hi in self.intervals:
            for b_lo, b_hi in other.intervals:
                lo, hi = max(a_lo, b_lo), min(a_hi, b_hi)
                if lo <= hi:
                    out.append((lo, hi))
        return Domain(_normalize(out))

    def overlaps(self, other: "Domain") -> bool:
        return not self.intersect(other).is_empty()

    def issubset(self, other: "Domain") -> bool:
        return self.intersect(other) == self

    def to_json(self) -> list[list[int]]:
        return [[lo, hi] for lo, hi in self.intervals]

    def __str__(self) -> str:
        return " u ".join(f"[{lo},{hi}]" for lo, hi in self.intervals) or "{}"


@dataclass(frozen=True)
class Policy:
    """A domain, a priority and one loop-free path per ingress port.

    ``paths`` is kept as a sorted tuple of ``(ingress, ports)`` pairs so the
    policy stays hashable; use :meth:`path_for` to look one up.
    """

    id: str
    domain: Domain
    priority: int
    paths: tuple[tuple[object, tuple], ...] = field(default=())

    @classmethod
    def make(cls, id: str, domain, priority: int, paths: Mapping) -> "Policy":
        if not isinstance(domain, Domain):
            domain = Domain.of(*domain)
        items = tuple(sorted(((k, tuple(v)) for k, v in paths.items()), key=lambda kv: str(kv[0])))
        return cls(id, domain, int(priority), items)

    def path_for(self, ingress) -> Optional[tuple]:
        for port, path in self.paths:
            if port == ingress:
                return path
        return None

    @property
    def path_map(self) -> dict:
        return dict(self.paths)

    def next_hops(self) -> dict:
        """Map each non-terminal port on any path to its successor."""
        hops: dict = {}
        for _, path in self.paths:
            for here, nxt in zip(path, path[1:]):
                hops.setdefault(here, set()).add(nxt)
        return hops

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "priority": self.priority,
            "domain": self.domain.to_json(),
            "paths": {str(k): list(v) for k, v in self.paths},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Policy":
        paths = {_port(k): [_port(p) for p in v] for k, v in obj.get("paths", {}).items()}
        return cls.make(obj["id"], Domain.of(*obj["domain"]), obj["priority"], paths)


def _port(p):
    if isinstance(p, str) and p not in TERMINALS:
        return int(p)
    return p


def independent(a: Policy, b: Policy) -> bool:
    return not a.domain.overlaps(b.domain)


def conflicts(a: Policy, b: Policy) -> bool:
    return not independent(a, b) and a.priority == b.priority


def conflict_free(policies: Iterable[Policy]) -> bool:
    pols = list(policies)
    return not any(
        conflicts(pols[i], pols[j]) for i in range(len(pols)) for j in range(i + 1, len(pols))
    )


def conflicts_with_any(pol: Policy, committed: Iterable[Policy]) -> bool:
    return any(conflicts(pol, other) for other in committed if other.id != pol.id)


def covering_policy(U: Iterable[Policy], flow: int) -> Optional[Policy]:
    """Highest-priority policy in ``U`` whose domain holds ``flow``."""
    best = None
    for pol in U:
        if flow not in pol.domain:
            continue
        if best is None or pol.priority > best.priority:
            best = pol
        elif pol.priority == best.priority and pol.id != best.id:
            raise ContractError(f"{pol.id} and {best.id} conflict; set is not conflict-free")
    return best


def resolve(U: Iterable[Policy], flow: int, ingress) -> Optional[tuple]:
    """Path prescribed by the composition of ``U`` for a packet, or None."""
    best = covering_policy(U, flow)
    if best is None:
        return None
    return best.path_for(ingress)


def expected_ports(U: Iterable[Policy], flow: int, ingress) -> tuple:
    """Ports a packet must visit under ``U``; uncovered packets go to Drop."""
    path = resolve(U, flow, ingress)
    if path is None:
        return (ingress, DROP)
    return path


def validate(pol: Policy, topo) -> list[str]:
    """All problems of ``pol`` against a topology; empty list means valid."""
    errors = []
    if pol.domain.is_empty():
        errors.append(f"{pol.id}: empty domain")
    for ingress, path in pol.paths:
        tag = f"{pol.id}@{ingress}"
        if ingress not in topo.ingress:
            errors.append(f"{tag}: {ingress} is not an ingress port")
        if not path or path[0] != ingress:
            errors.append(f"{tag}: path must start at its ingress")
            continue
        if len(set(path)) != len(path):
            errors.append(f"{tag}: loop (repeated port)")
        for here, nxt in zip(path, path[1:]):
            if (here, nxt) not in topo.links:
                errors.append(f"{tag}: broken link {here}->{nxt}")
        if path[-1] not in TERMINALS:
            errors.append(f"{tag}: non-terminal end {path[-1]}")
        if any(p in TERMINALS for p in path[:-1]):
            errors.append(f"{tag}: terminal port inside path")
    for port, succ in pol.next_hops().items():
        if len(succ) > 1:
            errors.append(f"{pol.id}: ambiguous next hop at {port}: {sorted(map(str, succ))}")
    return errors


def missing_ingress(pol: Policy, topo) -> list:
    """Ingress ports with no declared path; such packets are dropped."""
    have = {k for k, _ in pol.paths}
    return sorted(p for p in topo.ingress if p not in have)
