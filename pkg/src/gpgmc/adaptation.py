"""Online refinement of the emulator design via regenerative adaptation.

The chain alternates emulator-driven geometric steps with an independence
sampler whose proposal is a Gaussian mixture over the design points.  The
independence kernel is split as T = S*Q + (1-S)*R; whenever the Bernoulli
regeneration indicator fires, the design may be refreshed from the finished
tour with a greedy mutual-information criterion, the emulator and proposal
rebuilt, and the next state drawn from Q, all without disturbing the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular, LinAlgError
from scipy.special import logsumexp

from . import kernels, samplers
from .emulator import DesignSet, Emulator, Hyperparameters, build_emulator
from .errors import AllDegenerate, RejectionBudgetExhausted
from .geometry import EmulatedGeometry, METRIC_REG_SCALE
from .mle import fit_hyperparameters

__all__ = ["GaussianMixtureProposal", "build_mixture_proposal", "regen_log_prob",
           "regen_prob", "sample_Q", "maxmin_filter", "mice_select",
           "mice_refine", "MICEConfig", "RegenSchedule", "CandidatePool",
           "AdaptiveGPeSampler"]

LOG2PI = np.log(2.0 * np.pi)


# -- independence proposal -------------------------------------------------

class GaussianMixtureProposal:
    """Mixture of Gaussians centred at design points.

    Component precisions are the (regularized) Fisher matrices at the
    centres; the mixture weights are the relative posterior probabilities
    exp(-U) of the centres, normalized by log-sum-exp.
    """

    def __init__(self, centers: np.ndarray, precisions: np.ndarray,
                 potentials: np.ndarray):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.precisions = np.asarray(precisions, dtype=float)
        neg_u = -np.asarray(potentials, dtype=float)
        self.log_weights = neg_u - logsumexp(neg_u)
        self._chols = np.stack([cholesky(P, lower=True) for P in self.precisions])
        self._logdets = 2.0 * np.log(
            np.diagonal(self._chols, axis1=1, axis2=2)).sum(axis=1)

    @property
    def n_components(self) -> int:
        return self.centers.shape[0]

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        dim = theta.size
        diff = theta[None, :] - self.centers
        quad = np.einsum("ni,nij,nj->n", diff, self.precisions, diff)
        comps = self.log_weights + 0.5 * self._logdets - 0.5 * dim * LOG2PI \
            - 0.5 * quad
        return float(logsumexp(comps))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        i = rng.choice(self.n_components, p=np.exp(self.log_weights))
        z = rng.standard_normal(self.centers.shape[1])
        # precision = L L' so covariance = L^-T L^-1 and x = c + L^-T z
        return self.centers[i] + solve_triangular(self._chols[i].T, z, lower=False)


def build_mixture_proposal(emulator: Emulator,
                           reg_scale: float = METRIC_REG_SCALE,
                           precision_floor: np.ndarray | None = None
                           ) -> GaussianMixtureProposal:
    """Mixture proposal over the emulator's design points.

    Centre precisions are the empirical Fisher matrices at the design points
    (exact slices of the generalized Fisher matrix when the design carries
    per-datum gradients, emulated otherwise), regularized like the sampler
    metric.  ``precision_floor`` (typically the prior precision) is added to
    every component: a rank-deficient Fisher matrix alone would give the
    component near-infinite spread along its null space and the independence
    kernel would never accept.
    """
    design = emulator.design
    dim = design.dim
    n = design.n
    if emulator.gfi is not None and design.has_gradients:
        efis = np.empty((n, dim, dim))
        for i in range(n):
            rows = n + np.arange(dim) * n + i
            efis[i] = emulator.gfi[np.ix_(rows, rows)]
    elif emulator.gfi is not None:
        efis = emulator.predict_efi(design.points)
    else:
        raise AllDegenerate("design carries no per-datum information for precisions")
    floor = np.zeros((dim, dim)) if precision_floor is None \
        else np.asarray(precision_floor, dtype=float)
    precisions = np.empty_like(efis)
    for i in range(n):
        lam = max(reg_scale * float(np.trace(efis[i])) / dim, 1e-12)
        precisions[i] = 0.5 * (efis[i] + efis[i].T) + floor + lam * np.eye(dim)
    return GaussianMixtureProposal(design.points, precisions, design.potentials)


# -- regeneration ------------------------------------------------------------

def regen_log_prob(log_w_t: float, log_w_t1: float, log_c: float) -> float:
    """Log regeneration probability for an accepted independence move.

    ``log_w`` values are log(pi_unnorm/q) at the old and new states.  The
    split-kernel construction guarantees the result is <= 0; a tiny positive
    float residue is clamped.
    """
    log_r = min(0.0, log_c - log_w_t) + min(0.0, log_w_t1 - log_c) \
        - min(0.0, log_w_t1 - log_w_t)
    return min(0.0, log_r)


def regen_prob(log_pi_t, log_q_t, log_pi_t1, log_q_t1, log_c) -> float:
    """Regeneration probability r in [0, 1] from log densities."""
    return float(np.exp(regen_log_prob(log_pi_t - log_q_t,
                                       log_pi_t1 - log_q_t1, log_c)))


def sample_Q(rng: np.random.Generator, log_pi_fn, proposal: GaussianMixtureProposal,
             log_c: float, max_tries: int = 500):
    """Draw from the regeneration kernel Q by rejection from the proposal.

    Accepts a draw theta ~ q with probability min{1, pi(theta)/(c q(theta))}.
    Returns ``(theta, log_pi, n_tries)``; raises RejectionBudgetExhausted when
    the budget runs out (the constant c was badly chosen).
    """
    for tries in range(1, max_tries + 1):
        theta = proposal.sample(rng)
        log_pi = log_pi_fn(theta)
        log_acc = log_pi - log_c - proposal.logpdf(theta)
        if np.log(rng.random()) < min(0.0, log_acc):
            return theta, log_pi, tries
    raise RejectionBudgetExhausted(f"no Q draw accepted in {max_tries} tries")


# -- candidate management ------------------------------------------------

def maxmin_filter(candidates: np.ndarray, radius: float,
                  existing: np.ndarray | None = None) -> np.ndarray:
    """Greedy distance filter; returns indices of retained candidates.

    A candidate survives iff it is farther than ``radius`` from every point
    kept so far and from every existing design point.  Deterministic in the
    input order.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    kept: list[int] = []
    base = [] if existing is None else list(np.atleast_2d(existing))
    for j, cand in enumerate(candidates):
        pts = base + [candidates[i] for i in kept]
        if all(np.linalg.norm(cand - p) > radius for p in pts):
            kept.append(j)
    return np.array(kept, dtype=int)


# -- MICE ------------------------------------------------------------------

@dataclass
class MICEConfig:
    nugget: float = 1e-8
    cand_nugget: float = 1e-4
    init_keep: int = 5
    maxmin_radius: float = 0.2
    max_size: int = 40
    stop_mspe: float | None = None
    refit_each_step: bool = False
    refit_at_start: bool = True

    def __post_init__(self):
        if self.cand_nugget < self.nugget:
            raise ValueError("candidate nugget must be >= design nugget")


def _kriging_variance(eval_points, cond_points, rho, nugget, cond_grads=False):
    """Unscaled GP predictive variance at ``eval_points``.

    Uses the quadratic-basis universal-kriging variance when the conditioning
    set can support it (n~ >= q+1); falls back to simple kriging otherwise.
    """
    eval_points = np.atleast_2d(eval_points)
    cond_points = np.atleast_2d(cond_points)
    dim = cond_points.shape[1]
    q = 1 + 2 * dim
    C = kernels.tilde_corr(cond_points, rho, cond_grads)
    C[np.diag_indices_from(C)] += nugget
    chol = cho_factor(C, lower=True)
    c_e = kernels.cross_corr(eval_points, 0, cond_points, rho, cond_grads)
    Ci_ce = cho_solve(chol, c_e.T)
    var = 1.0 - np.einsum("ij,ji->i", c_e, Ci_ce)
    if C.shape[0] >= q + 1:
        H = kernels.tilde_basis(cond_points, cond_grads)
        h_e = kernels.basis(eval_points, 0)
        Ci_H = cho_solve(chol, H)
        B = H.T @ Ci_H
        R = h_e - c_e @ Ci_H
        try:
            chol_B = cho_factor(B, lower=True)
            var = var + np.einsum("ij,ji->i", R, cho_solve(chol_B, R.T))
        except LinAlgError:
            pass  # keep the simple-kriging variance
    return np.maximum(var, 0.0)


def mice_select(design: DesignSet, candidates: np.ndarray, rho: np.ndarray,
                cfg: MICEConfig):
    """Greedy mutual-information pick from a candidate set.

    Maximizes the ratio of the predictive variance given the design (design
    nugget) to the predictive variance given the remaining candidates
    (smoothing nugget).  Ties break to the lowest candidate index.  Returns
    ``(index, ratios)``.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    ncand = candidates.shape[0]
    num = _kriging_variance(candidates, design.points, rho, cfg.nugget,
                            design.has_gradients)
    ratios = np.full(ncand, -np.inf)
    for j in range(ncand):
        others = np.delete(candidates, j, axis=0)
        try:
            if others.shape[0] == 0:
                den = 1.0 + cfg.cand_nugget
            else:
                den = float(_kriging_variance(candidates[j:j + 1], others, rho,
                                              cfg.cand_nugget)[0])
        except (LinAlgError, ValueError):
            continue
        if den > 1e-14 and np.isfinite(num[j]) and np.isfinite(den):
            ratios[j] = num[j] / den
    if not np.any(np.isfinite(ratios)):
        raise AllDegenerate("all candidate denominators degenerate")
    return int(np.argmax(ratios)), ratios


@dataclass
class CandidatePool:
    """Scored candidates: previous samples with recycled evaluations."""

    points: np.ndarray
    potentials: np.ndarray
    per_datum: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.potentials = np.asarray(self.potentials, dtype=float)

    def __len__(self):
        return self.points.shape[0]

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return CandidatePool(
            self.points[idx], self.potentials[idx],
            None if self.per_datum is None else self.per_datum[idx])


def mice_refine(design: DesignSet, pool: CandidatePool, cfg: MICEConfig,
                hyper: Hyperparameters | None = None,
                holdout: tuple[np.ndarray, np.ndarray] | None = None,
                rng: np.random.Generator | None = None):
    """Refresh the design from a candidate pool, one greedy pick at a time.

    Keeps the ``init_keep`` most recently added design points, returns the
    remaining design rows to the candidate pool, then grows the design by
    repeated :func:`mice_select` until ``max_size`` (or the holdout-MSPE stop)
    is reached.  Stored potentials and per-datum rows are recycled; no new
    target evaluations happen here.  Gradient information is dropped: refined
    designs are value-based.

    Returns ``(DesignSet, Hyperparameters, info)``.
    """
    q = 1 + 2 * design.dim
    min_size = q + 3
    use_pd = design.per_datum is not None and pool.per_datum is not None

    # hyperparameters are refreshed once per refresh, on the incoming design
    if cfg.refit_at_start or hyper is None:
        fit_on = DesignSet(points=design.points, potentials=design.potentials)
        try:
            hyper, _ = fit_hyperparameters(
                fit_on, nugget=cfg.nugget,
                rng=rng if rng is not None else np.random.default_rng(0))
        except Exception:
            if hyper is None:
                raise
    rho = hyper.rho

    if design.n >= cfg.max_size:
        info = {"added": 0, "final_size": design.n, "mspe_trace": [], "rho": rho}
        return design, Hyperparameters(rho=rho, nugget=cfg.nugget), info

    keep = min(cfg.init_keep, design.n)
    kept = design.subset(np.arange(design.n - keep, design.n))
    current = DesignSet(points=kept.points, potentials=kept.potentials,
                        per_datum=kept.per_datum if use_pd else None)
    recycled_idx = np.arange(design.n - keep)
    extra = CandidatePool(
        design.points[recycled_idx], design.potentials[recycled_idx],
        design.per_datum[recycled_idx] if use_pd else None)
    merged = CandidatePool(
        np.vstack([pool.points, extra.points]),
        np.concatenate([pool.potentials, extra.potentials]),
        np.vstack([pool.per_datum, extra.per_datum]) if use_pd else None)

    # drop candidates indistinct from the kept design or each other
    keep_idx = maxmin_filter(merged.points, 1e-9, existing=current.points)
    merged = merged.take(keep_idx)

    mspe_trace = []
    added = 0
    while current.n < cfg.max_size and len(merged) > 0:
        try:
            j, _ = mice_select(current, merged.points, rho, cfg)
        except AllDegenerate:
            break
        current = current.appended(
            merged.points[j], merged.potentials[j],
            per_datum_row=merged.per_datum[j] if use_pd else None)
        mask = np.ones(len(merged), dtype=bool)
        mask[j] = False
        merged = merged.take(np.nonzero(mask)[0])
        added += 1
        if cfg.refit_each_step and current.n > q + 2:
            try:
                hyper, _ = fit_hyperparameters(
                    DesignSet(points=current.points, potentials=current.potentials),
                    nugget=cfg.nugget, rng=np.random.default_rng(0))
                rho = hyper.rho
            except Exception:
                pass
        if holdout is not None and current.n >= min_size:
            mspe = _holdout_mspe(current, hyper, holdout)
            mspe_trace.append(mspe)
            if cfg.stop_mspe is not None and mspe <= cfg.stop_mspe:
                break
    info = {"added": added, "final_size": current.n, "mspe_trace": mspe_trace,
            "rho": rho}
    return current, Hyperparameters(rho=rho, nugget=cfg.nugget), info


def _holdout_mspe(design: DesignSet, hyper: Hyperparameters, holdout) -> float:
    points, potentials = holdout
    try:
        em = build_emulator(design, hyper)
    except Exception:
        return np.inf
    pred = em.predict(points, 0).mean
    return float(np.mean((pred - potentials)**2))


# -- adaptive outer loop -------------------------------------------------

@dataclass
class RegenSchedule:
    """When to probe for regenerations and when to stop adapting.

    ``adaptation_active`` False turns the chain into a plain alternating
    sampler (no probes, design never mutates).  ``refine`` False keeps the
    regeneration probes and Q-restarts but never refreshes the design, which
    gives genuine i.i.d. tours under a fixed split constant.  ``track_c``
    re-derives the split constant at every probe from the rolling median of
    the chain's recent pi/q history, so early regenerations cannot be
    strangled by a constant calibrated to a bad initial design; the split
    identity holds for any per-step constant, so the target is untouched.
    """

    test_interval: int = 20
    adaptation_active: bool = True
    refine: bool = True
    track_c: bool = True
    stop_mspe_rel: float = 1e-2
    max_adaptations: int = 10
    holdout_size: int = 20
    pool_cap: int = 200
    min_pool: int = 10

    def __post_init__(self):
        if self.test_interval < 1:
            raise ValueError("test_interval must be >= 1")


@dataclass
class AdaptEvent:
    iteration: int
    kind: str
    design_size: int
    holdout_mspe: float = np.nan


class _PerDatumRecorder:
    """Target adapter that captures per-datum values of each potential call."""

    def __init__(self, target):
        self.target = target
        self.last_values = None

    def __getattr__(self, name):
        return getattr(self.target, name)

    def potential(self, theta):
        u, values = self.target.potential_per_datum(theta)
        self.last_values = values
        return u


class AdaptiveGPeSampler:
    """Alternating emulator-driven/independence sampler with regeneration.

    One ``step`` performs a geometric kernel transition and, every
    ``test_interval`` iterations, an independence-sampler transition on which
    regeneration is evaluated.  While adaptation is active, a regeneration
    triggers a design refresh from the finished tour, an emulator/proposal
    rebuild, and a restart draw from the regeneration kernel Q.
    """

    def __init__(self, target, design: DesignSet, integrator_cfg,
                 kernel: str = "hmc", schedule: RegenSchedule | None = None,
                 mice_cfg: MICEConfig | None = None,
                 rng: np.random.Generator | None = None,
                 reg_scale: float = METRIC_REG_SCALE,
                 hyper: Hyperparameters | None = None,
                 tune: bool = False, target_accept: float = 0.7):
        if kernel not in ("hmc", "rhmc", "lmc"):
            raise ValueError(f"unknown kernel {kernel!r}")
        self.raw_target = target
        self.target = _PerDatumRecorder(target)
        self.kernel = kernel
        self.cfg = integrator_cfg
        self.schedule = schedule or RegenSchedule()
        self.mice_cfg = mice_cfg or MICEConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.reg_scale = reg_scale
        self.tuner = samplers.DualAveraging(integrator_cfg.step_size,
                                            target=target_accept) if tune else None

        self.iteration = 0
        self.n_regenerations = 0
        self.n_rebuilds = 0
        self.n_adaptations = 0
        self.events: list[AdaptEvent] = []
        self._tour_points: list[np.ndarray] = []
        self._tour_potentials: list[float] = []
        self._tour_pd: list[np.ndarray] = []
        self._logw_history: list[float] = []
        self.last_holdout_mspe = np.nan

        self.design = design
        if hyper is None:
            hyper, _ = fit_hyperparameters(
                DesignSet(points=design.points, potentials=design.potentials),
                nugget=self.mice_cfg.nugget, rng=self.rng)
        self.hyper = hyper
        self._rebuild()

    # -- assembly --------------------------------------------------------

    def _rebuild(self):
        self.emulator = build_emulator(self.design, self.hyper)
        self.geometry = EmulatedGeometry(self.emulator, reg_scale=self.reg_scale)
        floor = self.raw_target.prior_precision() \
            if hasattr(self.raw_target, "prior_precision") else None
        self.proposal = build_mixture_proposal(self.emulator, self.reg_scale,
                                               precision_floor=floor)
        self.log_c = self._recompute_log_c()
        # ratios recorded under the previous proposal are meaningless now
        self._logw_history.clear()

    def _recompute_log_c(self):
        """Median of log(pi/q) over chain states seen at independence probes."""
        recent = self._logw_history[-200:]
        if len(recent) >= 10:
            return float(np.median(recent))
        logw = np.array([-u - self.proposal.logpdf(p)
                         for u, p in zip(self.design.potentials, self.design.points)])
        return float(np.median(logw))

    def _record_tour(self, theta, potential, per_datum):
        self._tour_points.append(np.array(theta))
        self._tour_potentials.append(float(potential))
        if per_datum is not None:
            self._tour_pd.append(np.array(per_datum))

    # -- kernels -----------------------------------------------------------

    def _gpe_step(self, state):
        step = {"hmc": samplers.hmc_step, "rhmc": samplers.rhmc_step,
                "lmc": samplers.lmc_step}[self.kernel]
        new_state, info = step(state, self.target, self.geometry, self.cfg)
        if info.accepted:
            self._record_tour(new_state.theta, new_state.potential,
                              self.target.last_values)
        if self.tuner is not None:
            if self.schedule.adaptation_active:
                self.cfg.step_size = self.tuner.update(info.alpha)
            else:
                self.cfg.step_size = self.tuner.tuned_step
        return new_state, info

    def _independence_step(self, state):
        prop = self.proposal.sample(self.rng)
        log_q_prop = self.proposal.logpdf(prop)
        u_prop = self.target.potential(prop)
        pd_prop = self.target.last_values
        log_q_cur = self.proposal.logpdf(state.theta)
        log_w_cur = -state.potential - log_q_cur
        log_w_prop = -u_prop - log_q_prop
        self._logw_history.append(log_w_cur)
        accept = np.log(self.rng.random()) < min(0.0, log_w_prop - log_w_cur)
        if not accept:
            # the proposal's potential was paid for at the Metropolis test;
            # recycle it as a candidate even though the move was rejected
            self._record_tour(prop, u_prop, pd_prop)
            return state, False
        new_state = samplers.ChainState(prop, u_prop, state.rng)
        self._record_tour(prop, u_prop, pd_prop)
        if self.schedule.adaptation_active:
            log_c = self.log_c
            if self.schedule.refine and self.schedule.track_c:
                recent = self._logw_history[-25:]
                if recent:
                    log_c = float(np.median(recent))
            log_r = regen_log_prob(log_w_cur, log_w_prop, log_c)
            if np.log(self.rng.random()) < log_r:
                self._probe_log_c = log_c
                new_state = self._on_regeneration(new_state)
        return new_state, True

    def _on_regeneration(self, state):
        self.n_regenerations += 1
        self.events.append(AdaptEvent(self.iteration, "regen", self.design.n,
                                      self.last_holdout_mspe))
        return self._adapt(state)

    def _clear_tour(self):
        self._tour_points.clear()
        self._tour_potentials.clear()
        self._tour_pd.clear()

    def _adapt(self, state):
        probe_log_c = getattr(self, "_probe_log_c", self.log_c)
        if self.schedule.refine:
            pool, holdout = self._collect_pool()
            if pool is not None:
                self.events.append(AdaptEvent(self.iteration, "adapt_start",
                                              self.design.n))
                new_design, new_hyper, info = mice_refine(
                    self.design, pool, self.mice_cfg, hyper=self.hyper,
                    holdout=holdout, rng=self.rng)
                q = 1 + 2 * self.design.dim
                if new_design.n > q + 2:
                    self.design, self.hyper = new_design, new_hyper
                self._clear_tour()
                self.n_adaptations += 1
                if self.tuner is not None:
                    # the refreshed emulator changes the energy landscape the
                    # step size was tuned against
                    self.tuner = samplers.DualAveraging(
                        max(self.cfg.step_size, 1e-4), target=self.tuner.target)
                if holdout is not None:
                    self.last_holdout_mspe = _holdout_mspe(
                        self.design, self.hyper, holdout)
                    var = float(np.var(holdout[1]))
                    if self.last_holdout_mspe <= self.schedule.stop_mspe_rel * var:
                        self.schedule.adaptation_active = False
                if self.n_adaptations >= self.schedule.max_adaptations:
                    self.schedule.adaptation_active = False
                self.events.append(AdaptEvent(self.iteration, "adapt_done",
                                              self.design.n, self.last_holdout_mspe))
            # one rebuild per regeneration while designs are being refined:
            # refreshes the split constant even when the tour was too thin to
            # attempt a refinement
            self._rebuild()
            self.n_rebuilds += 1
        # restart from the regeneration kernel, with the split constant that
        # fired the probe
        try:
            theta, log_pi, _ = sample_Q(
                self.rng, lambda t: -self.target.potential(t), self.proposal,
                probe_log_c)
            restart = samplers.ChainState(np.asarray(theta), -log_pi, state.rng)
            self._record_tour(restart.theta, restart.potential,
                              self.target.last_values)
            return restart
        except RejectionBudgetExhausted:
            self.events.append(AdaptEvent(self.iteration, "q_exhausted",
                                          self.design.n))
            return state

    def _collect_pool(self):
        pts = self._tour_points
        if len(pts) < max(3, self.schedule.min_pool):
            return None, None
        points = np.array(pts)
        potentials = np.array(self._tour_potentials)
        pd = np.array(self._tour_pd) if len(self._tour_pd) == len(pts) else None
        # reserve a spread holdout before thinning
        nh = min(self.schedule.holdout_size, max(0, len(pts) - 5))
        hold_idx = np.linspace(0, len(pts) - 1, nh).astype(int) if nh >= 3 else []
        hold_mask = np.zeros(len(pts), dtype=bool)
        hold_mask[hold_idx] = True
        holdout = (points[hold_mask], potentials[hold_mask]) if nh >= 3 else None
        points, potentials = points[~hold_mask], potentials[~hold_mask]
        if pd is not None:
            pd = pd[~hold_mask]
        if points.shape[0] > self.schedule.pool_cap:
            thin = np.linspace(0, points.shape[0] - 1, self.schedule.pool_cap).astype(int)
            points, potentials = points[thin], potentials[thin]
            if pd is not None:
                pd = pd[thin]
        kept = maxmin_filter(points, self.mice_cfg.maxmin_radius)
        if kept.size == 0:
            return None, holdout
        pool = CandidatePool(points[kept], potentials[kept],
                             None if pd is None else pd[kept])
        return pool, holdout

    # -- public ------------------------------------------------------------

    def step(self, state):
        """One outer iteration; returns (state, info_dict)."""
        self.iteration += 1
        state, info = self._gpe_step(state)
        regen_before = self.n_regenerations
        indep_accept = None
        if self.iteration % self.schedule.test_interval == 0:
            state, indep_accept = self._independence_step(state)
        return state, {
            "accepted": info.accepted,
            "alpha": info.alpha,
            "indep_accepted": indep_accept,
            "regenerated": self.n_regenerations > regen_before,
        }
