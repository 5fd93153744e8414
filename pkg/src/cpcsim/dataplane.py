"""Ports, links, FIFO queues and prioritized rule tables."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from .policy import DROP, TERMINALS, WORLD, Domain, _port


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Topology:
    ports: frozenset
    links: frozenset

    @classmethod
    def build(cls, ports: Iterable[int], links: Iterable, ingress: Optional[Iterable[int]] = None):
        """Create a topology; every regular port gets a link to Drop."""
        ports = frozenset(_port(p) for p in ports)
        if WORLD in ports or DROP in ports:
            raise ConfigError("World and Drop are implicit, do not list them as ports")
        links = {(_port(a), _port(b)) for a, b in links}
        links |= {(p, DROP) for p in ports}
        for a, b in links:
            if a in TERMINALS:
                raise ConfigError(f"{a} has no outgoing links, got {a}->{b}")
            if a not in ports or (b not in ports and b not in TERMINALS):
                raise ConfigError(f"link {a}->{b} references an unknown port")
            if a == b:
                raise ConfigError(f"self-loop at {a}")
        topo = cls(ports, frozenset(links))
        if ingress is not None and set(_port(p) for p in ingress) != set(topo.ingress):
            raise ConfigError(
                f"declared ingress {sorted(ingress)} differs from derived {topo.ingress}"
            )
        return topo

    @property
    def ingress(self) -> list[int]:
        targets = {b for _, b in self.links}
        return sorted(p for p in self.ports if p not in targets)

    @property
    def internal(self) -> list[int]:
        ing = set(self.ingress)
        return sorted(p for p in self.ports if p not in ing)

    def successors(self, port) -> list:
        return sorted((b for a, b in self.links if a == port), key=str)

    def to_json(self) -> dict:
        return {
            "ports": sorted(self.ports),
            "links": sorted(([a, b] for a, b in self.links if b != DROP), key=lambda l: (l[0], str(l[1]))),
            "ingress": self.ingress,
        }

    @classmethod
    def from_json(cls, obj) -> "Topology":
        return cls.build(obj["ports"], obj["links"], obj.get("ingress"))


@dataclass(frozen=True)
class Packet:
    uid: int
    flow: int
    tag: Optional[int] = None


@dataclass(frozen=True)
class Rule:
    """One entry of a switch function.

    ``tag=None`` matches any tag (including untagged packets); ``set_tag=None``
    keeps the header.  ``policy`` and ``version`` are metadata used by the
    protocols to detect conflicts and to garbage-collect stale rules.
    """

    policy: str
    domain: Domain
    priority: int
    out: object
    tag: Optional[int] = None
    set_tag: Optional[int] = None
    version: int = 0
    # opaque controller metadata (a cookie); never inspected by the switch
    origin: object = field(default=None, compare=False, repr=False)

    @property
    def key(self):
        return (self.policy, self.tag)

    def matches(self, pk: Packet) -> bool:
        return pk.flow in self.domain and (self.tag is None or self.tag == pk.tag)

    def overlaps(self, other: "Rule") -> bool:
        if self.tag is not None and other.tag is not None and self.tag != other.tag:
            return False
        return self.domain.overlaps(other.domain)

    def apply(self, pk: Packet) -> tuple[Packet, object]:
        if self.set_tag is not None:
            pk = replace(pk, tag=self.set_tag)
        return pk, self.out

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "domain": self.domain.to_json(),
            "priority": self.priority,
            "tag": self.tag,
            "set_tag": self.set_tag,
            "out": self.out,
            "version": self.version,
        }


def select_rule(rules: Iterable[Rule], pk: Packet) -> Optional[Rule]:
    best = None
    for r in rules:
        if not r.matches(pk):
            continue
        if best is None or r.priority > best.priority:
            best = r
        elif r.priority == best.priority and (r.out, r.set_tag) != (best.out, best.set_tag):
            raise ConfigError(f"ambiguous rules {best} and {r} for {pk}")
    return best


def ambiguous_pairs(rules: Iterable[Rule]) -> list[tuple[Rule, Rule]]:
    """Equal-priority rules with overlapping matches and different actions."""
    rules = list(rules)
    bad = []
    for i, a in enumerate(rules):
        for b in rules[i + 1:]:
            if a.priority == b.priority and a.overlaps(b) and (a.out, a.set_tag) != (b.out, b.set_tag):
                bad.append((a, b))
    return bad


@dataclass
class PortState:
    port: int
    queue: deque = field(default_factory=deque)
    rules: tuple = ()


class DataPlane:
    """Network state: one queue and one rule set per regular port.

    All mutation goes through :meth:`inject`, :meth:`forward_step`,
    :meth:`port_update` (or the weak :meth:`port_read` / :meth:`port_write`
    pair).  The caller is responsible for serializing these calls.
    """

    def __init__(self, topo: Topology, weak: bool = False):
        self.topo = topo
        self.weak = weak
        self.state = {p: PortState(p) for p in sorted(topo.ports)}
        self._ingress = set(topo.ingress)

    def rules(self, port) -> tuple:
        return self.state[port].rules

    def install_initial(self, port, rules: Iterable[Rule]) -> None:
        self.state[port].rules = tuple(rules)

    def queue(self, port) -> list[Packet]:
        return list(self.state[port].queue)

    def inject(self, pk: Packet, port) -> None:
        if port not in self._ingress:
            raise ConfigError(f"inject at non-ingress port {port}")
        if pk.tag is not None:
            raise ConfigError("injected packets carry no tag")
        self.state[port].queue.append(pk)

    def forward_step(self, port):
        """Process the head of ``Q_port``; returns ``(pk, pk', out, rule)``."""
        q = self.state[port].queue
        if not q:
            raise ConfigError(f"forward on empty queue {port}")
        pk = q.popleft()
        rule = select_rule(self.state[port].rules, pk)
        if rule is None:
            new, out = pk, DROP
        else:
            new, out = rule.apply(pk)
        if (port, out) not in self.topo.links:
            raise ConfigError(f"rule at {port} forwards to non-neighbour {out}")
        if out not in TERMINALS:
            self.state[out].queue.append(new)
        return pk, new, out, rule

    def port_update(self, port, g: Callable):
        if self.weak:
            raise ConfigError("port_update is unavailable with read/write ports")
        st = self.state[port]
        new_rules, response = g(st.rules)
        st.rules = tuple(new_rules)
        return response

    def port_read(self, port) -> tuple:
        if not self.weak:
            raise ConfigError("port_read requires the read/write port model")
        return self.state[port].rules

    def port_write(self, port, rules: Iterable[Rule]) -> str:
        if not self.weak:
            raise ConfigError("port_write requires the read/write port model")
        self.state[port].rules = tuple(rules)
        return "ok"

    def tags_in_use(self) -> set:
        return {pk.tag for st in self.state.values() for pk in st.queue if pk.tag is not None}

    def in_flight(self) -> int:
        return sum(len(st.queue) for st in self.state.values())

    def nonempty_ports(self) -> list:
        return [p for p, st in self.state.items() if st.queue]

    def snapshot(self) -> dict:
        return {p: tuple(st.rules) for p, st in self.state.items()}
