"""Second-price auction replay over a recorded bid stream.

The replay is the unmodeled environment the controller probes: within a
period every opportunity is priced with the same adjustment, wins pay the
logged market price, and click/conversion labels realize only on wins.
Bidding terminates permanently once cumulative cost reaches the budget;
the single win that crosses the line is kept (its cost is unknown until
the auction resolves), everything after it sees no participation.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Protocol

import numpy as np

from .core import (
    BidRecord,
    CampaignMetrics,
    ConfigurationError,
    ConstraintSet,
    PeriodFeedback,
    compute_metrics,
)
from .controller import BudgetErrorMode, cost_value, kpi_error
from .data import BidLog


class PeriodMode(Enum):
    COUNT = "count"            # fixed number of opportunities per period
    WALL_CLOCK = "wall_clock"  # fixed timestamp window per period


@dataclass(frozen=True)
class SimConfig:
    budget: int
    period_mode: PeriodMode = PeriodMode.COUNT
    period_bids: int = 1000
    period_ms: int = 900_000
    dropout_p: float = 0.0
    dropout_seed: int = 0
    # tie rule is fixed: a bid equal to the market price loses

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ConfigurationError("budget must be >= 0")
        if not (0.0 <= self.dropout_p <= 1.0):
            raise ConfigurationError("dropout_p must lie in [0, 1]")
        if self.period_mode is PeriodMode.COUNT and self.period_bids < 1:
            raise ConfigurationError("period_bids must be >= 1")
        if self.period_mode is PeriodMode.WALL_CLOCK and self.period_ms < 1:
            raise ConfigurationError("period_ms must be >= 1")


class AuctionOutcome(Enum):
    WIN = "win"
    LOSE = "lose"
    TERMINATED = "terminated"


def resolve_auction(record: BidRecord, ecpm: float,
                    remaining_budget: int) -> tuple[AuctionOutcome, int]:
    """Resolve one opportunity; returns the outcome and the cost charged.

    No participation once the budget is spent; otherwise a strict
    second-price comparison (ties lose) paying the market price.
    """
    if remaining_budget <= 0:
        return AuctionOutcome.TERMINATED, 0
    if ecpm > record.market_price:
        return AuctionOutcome.WIN, record.market_price
    return AuctionOutcome.LOSE, 0


def run_period(batch: BidLog, u: float, ppc_expected: float,
               spent: int, budget: int) -> PeriodFeedback:
    """Replay one period's batch under a single adjustment value.

    Returns the period's feedback deltas.  Participation stops inside the
    batch at the first win that lifts cumulative cost to the budget; later
    records are terminated and counted nowhere.
    """
    if spent >= budget or len(batch) == 0:
        return PeriodFeedback()
    # same left-to-right multiply order as adjusted_ecpm, element for element
    ecpm = 1000.0 * batch.pctr
    ecpm = ecpm * batch.pcvr
    ecpm = ecpm * ppc_expected
    ecpm = ecpm * u
    win = ecpm > batch.market_price
    costs = np.where(win, batch.market_price, 0)
    cum = spent + np.cumsum(costs, dtype=np.int64)
    over = cum >= budget
    n_part = int(np.argmax(over)) + 1 if over.any() else len(batch)
    win = win[:n_part]
    clicked = win & batch.click[:n_part]
    return PeriodFeedback(
        bids_participated=n_part,
        impressions=int(np.count_nonzero(win)),
        clicks=int(np.count_nonzero(clicked)),
        conversions=int(np.count_nonzero(clicked & batch.conversion[:n_part])),
        cost=int(cum[n_part - 1] - spent),
        sum_pctr=float(batch.pctr[:n_part].sum()),
        sum_pcvr=float(batch.pcvr[:n_part].sum()),
    )


def apply_dropout(log: BidLog, p: float, seed: int) -> BidLog:
    """Independently keep each record with probability 1-p (seeded).

    The mask depends only on (len(log), p, seed), so every controller in a
    trial replays the identical thinned stream.
    """
    if not (0.0 <= p <= 1.0):
        raise ConfigurationError("dropout probability must lie in [0, 1]")
    if p == 0.0:
        return log
    keep = np.random.default_rng(seed).random(len(log)) >= p
    return log.filter(keep)


class PeriodController(Protocol):
    def begin_period(self, feedback: PeriodFeedback) -> float: ...
    def end_period(self, feedback: PeriodFeedback, elapsed_fraction: float = 1.0) -> None: ...


@dataclass(frozen=True)
class PeriodTrace:
    period: int
    u: float
    errors: tuple[float, ...]     # target-normalized, one per constraint
    j: float                      # quadratic period cost (unit control weight)
    feedback: PeriodFeedback      # cumulative through this period


@dataclass(frozen=True)
class CampaignResult:
    metrics: CampaignMetrics
    trace: tuple[PeriodTrace, ...]
    terminated: bool
    records: int                  # opportunities in the (post-dropout) stream


def _period_bounds(log: BidLog, sim: SimConfig) -> Iterator[tuple[int, int]]:
    n = len(log)
    if n == 0:
        return
    if sim.period_mode is PeriodMode.COUNT:
        for lo in range(0, n, sim.period_bids):
            yield lo, min(lo + sim.period_bids, n)
    else:
        start = int(log.ts[0])
        lo = 0
        while lo < n:
            edge = start + sim.period_ms
            hi = int(np.searchsorted(log.ts, edge, side="left"))
            yield lo, hi
            lo, start = hi, edge


def run_campaign(log: BidLog, controller: PeriodController,
                 constraints: ConstraintSet, sim: SimConfig) -> CampaignResult:
    """Replay a full campaign: one controller decision per period, learning
    after each period, stopping at stream end or budget termination.

    Trace errors are always measured against the full targets so traces are
    comparable across controllers and budget-error modes; the control term
    of the traced cost uses unit weight.
    """
    log = apply_dropout(log, sim.dropout_p, sim.dropout_seed)
    n = len(log)
    cumulative = PeriodFeedback()
    trace: list[PeriodTrace] = []
    weights = np.array([c.error_weight for c in constraints.constraints])
    u_prev: float | None = None
    terminated = False
    for period, (lo, hi) in enumerate(_period_bounds(log, sim)):
        u = controller.begin_period(cumulative)
        delta = run_period(log.segment(lo, hi), u, constraints.ppc_expected,
                           cumulative.cost, sim.budget)
        cumulative = cumulative + delta
        elapsed = hi / n
        controller.end_period(cumulative, elapsed)
        errors = kpi_error(constraints, cumulative, elapsed, BudgetErrorMode.FULL_BUDGET)
        du = np.array([u - u_prev]) if u_prev is not None else np.zeros(1)
        j = cost_value(errors, weights, du, np.ones(1))
        trace.append(PeriodTrace(period=period, u=u, errors=tuple(float(e) for e in errors),
                                 j=j, feedback=cumulative))
        u_prev = u
        if cumulative.cost >= sim.budget:
            terminated = True
            break
    trajectory = tuple((t.feedback.conversions, t.feedback.cost) for t in trace)
    return CampaignResult(
        metrics=compute_metrics(cumulative, trajectory),
        trace=tuple(trace),
        terminated=terminated,
        records=n,
    )
