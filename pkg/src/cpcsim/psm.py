"""Policy Serialization: a linearizable push/pull object that fixes the
installation order of policies and the tag each one is equipped with.

The object is driven by the simulator, one operation per scheduler step, so
linearization is the order of calls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .policy import Policy, conflicts_with_any


@dataclass(frozen=True)
class PullResult:
    index: int
    policy: Policy
    tag: int
    # True when a later index already has a tag: some controller has finished
    # installing this one, so the caller only records it
    installed: bool = False


@dataclass
class PSState:
    f: int
    initial: Policy
    initial_tag: int = 0
    budget: Optional[int] = None
    # "stall": answer bottom when every candidate tag is blocked;
    # "reuse": ignore blocking and take the smallest tag other than the predecessor's.
    exhaustion: str = "stall"
    pushed: list = field(default_factory=list)
    cursor: dict = field(default_factory=dict)
    holding: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    committed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.budget is None:
            self.budget = self.f + 2
        if self.exhaustion not in ("stall", "reuse"):
            raise ValueError(f"unknown exhaustion mode {self.exhaustion!r}")
        self.tags[0] = self.initial_tag
        self.committed[0] = True
        self._committed_set = [self.initial]

    # -- operations ----------------------------------------------------

    def push(self, cid, policy: Policy) -> int:
        if any(p.id == policy.id for _, p in self.pushed):
            raise ValueError(f"policy {policy.id} pushed twice")
        self.pushed.append((cid, policy))
        k = len(self.pushed)
        ok = not conflicts_with_any(policy, self._committed_set)
        self.committed[k] = ok
        if ok:
            self._committed_set.append(policy)
        return k

    def pull(self, cid):
        """Returns ``(PullResult or None, info)``; ``info`` explains the outcome."""
        res, info = self._evaluate(cid)
        if res is None:
            self.holding[cid] = False
            return None, info
        self.tags.setdefault(res.index, res.tag)
        self.cursor[cid] = res.index
        self.holding[cid] = not res.installed
        return res, info

    def would_return(self, cid) -> bool:
        return self._evaluate(cid)[0] is not None

    # -- derived state -------------------------------------------------

    def pred_index(self, k: int) -> int:
        """Index of the latest committed policy before ``k`` (0 = initial)."""
        j = k - 1
        while j > 0 and not self.committed[j]:
            j -= 1
        return j

    def pred_tag(self, k: int) -> int:
        return self.tags[self.pred_index(k)]

    def blocked_tags(self, exclude=None) -> set:
        """Tags that a controller still mid-installation may flip away from."""
        out = set()
        for cid, held in self.holding.items():
            if held and cid != exclude:
                out.add(self.pred_tag(self.cursor[cid]))
        return out

    def choose_tag(self, k: int, blocked: set) -> Optional[int]:
        prev = self.pred_tag(k)
        free = [t for t in range(self.budget) if t != prev and t not in blocked]
        if free:
            return free[0]
        if self.exhaustion == "reuse":
            return min(t for t in range(self.budget) if t != prev)
        return None

    def _evaluate(self, cid):
        k = self.cursor.get(cid, 0) + 1
        blocked = self.blocked_tags(exclude=cid)
        info = {"index": k, "blocked": sorted(blocked)}
        if k > len(self.pushed):
            return None, dict(info, reason="no-push")
        if len(blocked) >= self.f + 1:
            return None, dict(info, reason="blocked")
        tag = self.tags.get(k)
        if tag is None:
            tag = self.choose_tag(k, blocked)
            if tag is None:
                return None, dict(info, reason="exhausted")
        return PullResult(k, self.pushed[k - 1][1], tag, (k + 1) in self.tags), info


def replay(events, f: int, initial: Policy, policies: dict, budget: Optional[int] = None,
           initial_tag: int = 0) -> list[str]:
    """Re-derive every logged push/pull from the sequential specification.

    Works from the raw event list only (no :class:`PSState`), scanning the
    pull history to recompute blocked tags.  Returns a list of discrepancies.
    """
    budget = f + 2 if budget is None else budget
    pushes: list[str] = []
    commit: list[bool] = []
    pulls: list[tuple] = []  # (cid, index or None, installed)
    agreed: dict[int, tuple] = {}
    problems = []

    def committed_before(j):
        for i in range(j - 1, 0, -1):
            if commit[i - 1]:
                return i
        return 0

    def tag_of(i):
        return initial_tag if i == 0 else agreed[i][1]

    for ev in events:
        if ev.get("kind") == "ps_push":
            pid = ev["policy"]
            pol = policies[pid]
            live = [initial] + [policies[p] for p, c in zip(pushes, commit) if c]
            pushes.append(pid)
            commit.append(not conflicts_with_any(pol, live))
            if ev.get("index") != len(pushes):
                problems.append(f"seq {ev['seq']}: push index {ev.get('index')} != {len(pushes)}")
        elif ev.get("kind") == "ps_pull":
            cid = ev["cid"]
            k = sum(1 for c, i, _ in pulls if c == cid and i is not None) + 1
            last: dict = {}
            for c, i, done in pulls:
                last[c] = None if done else i
            blocked = {tag_of(committed_before(i)) for c, i in last.items() if c != cid and i is not None}
            res = ev["result"]
            if k > len(pushes) or len(blocked) >= f + 1:
                expect_bottom = True
            elif k in agreed:
                expect_bottom = False
            else:
                prev = tag_of(committed_before(k))
                expect_bottom = not [t for t in range(budget) if t != prev and t not in blocked]
            if res is None:
                if not expect_bottom:
                    problems.append(f"seq {ev['seq']}: unjustified bottom for controller {cid} at index {k}")
                pulls.append((cid, None, False))
                continue
            if expect_bottom:
                problems.append(f"seq {ev['seq']}: non-triviality requires bottom for {cid} at {k}")
            idx, pid, tag = res["index"], res["policy"], res["tag"]
            if idx != k or pid != pushes[k - 1]:
                problems.append(f"seq {ev['seq']}: pull returned {pid}#{idx}, expected {pushes[k - 1]}#{k}")
            if not 0 <= tag < budget:
                problems.append(f"seq {ev['seq']}: tag {tag} outside budget {budget}")
            if idx in agreed:
                if agreed[idx] != (pid, tag):
                    problems.append(f"seq {ev['seq']}: agreement broken at index {idx}")
            else:
                prev = tag_of(committed_before(idx))
                free = [t for t in range(budget) if t != prev and t not in blocked]
                if free and tag != free[0]:
                    problems.append(f"seq {ev['seq']}: tag {tag} for index {idx}, expected {free[0]}")
                agreed[idx] = (pid, tag)
            done = (idx + 1) in agreed
            if bool(res.get("installed")) != done:
                problems.append(f"seq {ev['seq']}: installed flag {res.get('installed')} at {idx}, "
                                f"expected {done}")
            pulls.append((cid, idx, done))
    return problems
