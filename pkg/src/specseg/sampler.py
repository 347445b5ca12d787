"""Reversible-jump sampler over partitions and penalized-spline coefficients.

Each iteration applies, in order:

1. one between-model attempt — a birth (insert a breakpoint, split the
   smoothing parameters of the components drawn to change there, and draw
   new coefficient vectors for both sides from Gaussian approximations of
   their conditionals) or a death (the inverse), accepted with the full
   reversible-jump ratio including proposal densities and the
   smoothing-parameter split Jacobian;
2. one change-set attempt — toggling a single component's membership in a
   single breakpoint's change-set via the same split/merge machinery, which
   lets changes migrate between breakpoints at fixed segment count;
3. a relocation of one breakpoint (mixture of a local window and a global
   uniform draw) with all component-runs touching the two affected segments
   redrawn from Gaussian approximations;
4. a Hamiltonian Monte Carlo sweep over every component-run block, in
   random order, with identity mass matrix and a shared step size that is
   dual-averaging adapted during burn-in only;
5. a Gibbs refresh of every smoothing parameter from its truncated
   inverse-gamma conditional.

All Gaussian proposals inside one move are built from a single deterministic
base state (the move's partition with inherited/warm coefficient values), so
both the forward and the reverse proposal densities are well defined.

The chain is strictly sequential: one mutable engine drives one state, and
the DFT cache is confined to that thread.  Parallelism belongs outside the
chain (independent replicates with their own seeds); the snapshots handed to
the posterior stage are immutable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace as dc_replace
import numpy as np

from . import model
from .errors import ConfigError, InvalidStateError
from .likelihood import DftCache, bases_for_segment, segment_fields, whittle_loglik
from .model import (
    ComponentRunMap,
    MultivariateSeries,
    Partition,
    SegmentCoefficients,
    component_indices,
    component_runs,
)
from .priors import (
    PriorConfig,
    gaussian_logpdf_diag,
    log_prior_partition,
    prior_variances,
    sample_lambda_conditional,
)
from .proposals import (
    GaussianProposal,
    SegWorkspace,
    block_potential,
    laplace_proposal,
    log_split_jacobian,
    merge_lambda,
    split_fraction,
    split_lambda,
)

MOVE_TYPES = ("birth", "death", "relocate", "changeset", "hmc")


@dataclass
class SamplerConfig:
    """Chain length, proposal mixture and HMC tuning knobs."""

    iterations: int
    burn_in: int
    seed: int = 0
    prob_birth: float = 0.5
    leapfrog_steps: int = 20
    step_size: float = 0.01
    step_size_jitter: float = 0.2
    target_accept: float = 0.8
    relocate_local_prob: float = 0.75
    relocate_window: int = 25
    consistency_check_every: int = 500
    thin: int = 1
    s_trunc: int = 10
    newton_steps: int = 5
    flat_likelihood: bool = False

    def __post_init__(self):
        if self.iterations < 1 or not (0 <= self.burn_in < self.iterations):
            raise ConfigError("need 0 <= burn_in < iterations")
        if not (0.0 < self.prob_birth < 1.0):
            raise ConfigError("prob_birth must lie in (0, 1)")
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be >= 1")
        if self.step_size <= 0.0:
            raise ConfigError("step_size must be positive")
        if not (0.0 <= self.step_size_jitter < 1.0):
            raise ConfigError("step_size_jitter must lie in [0, 1)")
        if not (0.0 <= self.relocate_local_prob <= 1.0):
            raise ConfigError("relocate_local_prob must lie in [0, 1]")
        if self.relocate_window < 1:
            raise ConfigError("relocate_window must be >= 1")
        if self.consistency_check_every < 1 or self.thin < 1:
            raise ConfigError("consistency_check_every and thin must be >= 1")
        if self.s_trunc < 4:
            raise ConfigError("basis truncation level must be >= 4")


@dataclass
class MoveDiagnostics:
    """Counters accumulated over a run."""

    proposed: dict = field(default_factory=lambda: {m: 0 for m in MOVE_TYPES})
    accepted: dict = field(default_factory=lambda: {m: 0 for m in MOVE_TYPES})
    skipped: dict = field(default_factory=lambda: {m: 0 for m in MOVE_TYPES})
    hmc_divergences: int = 0
    clamp_events: int = 0
    lambda_fallbacks: int = 0
    consistency_checks: int = 0
    max_loglik_drift: float = 0.0
    final_step_size: float = float("nan")
    seconds_per_iteration: float = float("nan")
    seconds_per_iteration_sd: float = float("nan")
    total_seconds: float = float("nan")

    def acceptance_rate(self, move: str) -> float:
        return self.accepted[move] / self.proposed[move] if self.proposed[move] else float("nan")

    def as_dict(self) -> dict:
        out = {
            "proposed": dict(self.proposed),
            "accepted": dict(self.accepted),
            "skipped": dict(self.skipped),
            "acceptance_rate": {m: self.acceptance_rate(m) for m in MOVE_TYPES},
            "hmc_divergences": self.hmc_divergences,
            "clamp_events": self.clamp_events,
            "lambda_fallbacks": self.lambda_fallbacks,
            "consistency_checks": self.consistency_checks,
            "max_loglik_drift": self.max_loglik_drift,
            "final_step_size": self.final_step_size,
            "seconds_per_iteration": self.seconds_per_iteration,
            "seconds_per_iteration_sd": self.seconds_per_iteration_sd,
            "total_seconds": self.total_seconds,
        }
        return out


@dataclass(frozen=True)
class ChainState:
    """Immutable snapshot: partition, coefficients, cached per-segment log-likelihoods."""

    partition: Partition
    coeffs: SegmentCoefficients
    seg_loglik: np.ndarray
    iteration: int = -1

    @property
    def loglik(self) -> float:
        return float(np.sum(self.seg_loglik))

    @property
    def m(self) -> int:
        return self.partition.m


class DualAveraging:
    """Nesterov dual averaging of the log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float = 0.8, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_prob: float) -> None:
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        self.log_eps = min(max(self.log_eps, math.log(1e-6)), 0.0)
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    @property
    def current(self) -> float:
        return math.exp(self.log_eps)

    @property
    def smoothed(self) -> float:
        return math.exp(self.log_eps_bar)


def hmc_trajectory(potential, x0: np.ndarray, eps: float, n_steps: int, rng):
    """One leapfrog trajectory; returns (new_x or None, accept_prob, diverged)."""
    p0 = rng.standard_normal(x0.size)
    x = x0.copy()
    p = p0.copy()
    u0 = potential.value(x0)
    with np.errstate(over="ignore", invalid="ignore"):
        g = potential.grad(x)
        for _ in range(n_steps):
            p -= 0.5 * eps * g
            x += eps * p
            g = potential.grad(x)
            if not np.all(np.isfinite(g)):
                return None, 0.0, True
            p -= 0.5 * eps * g
        u1 = potential.value(x)
    dh = (u1 - u0) + 0.5 * float(p @ p - p0 @ p0)
    u = rng.uniform()
    if not np.isfinite(dh) or abs(dh) > 1000.0:
        return None, 0.0, True
    accept_prob = min(1.0, math.exp(-dh)) if dh > 0 else 1.0
    return (x if math.log(max(u, 1e-300)) < -dh else None), accept_prob, False


class SamplerEngine:
    """Owns the chain loop; one instance per (series, configs) run."""

    def __init__(self, series: MultivariateSeries, prior: PriorConfig,
                 config: SamplerConfig):
        prior.validate_for(series.n_samples, config.s_trunc)
        if series.n_samples < 2 * prior.n_min:
            raise ConfigError("series shorter than twice the minimum segment length")
        self.series = series
        self.prior = prior
        self.cfg = config
        self.n_dim = series.n_dim
        self.n_comp = self.n_dim * self.n_dim
        self.comps = component_indices(self.n_dim)
        self.s = config.s_trunc
        self.dft = DftCache(series, flat=config.flat_likelihood)
        self.diag = MoveDiagnostics()

    # ------------------------------------------------------------------ utils

    def p_birth(self, m: int) -> float:
        if self.prior.max_segments == 1:
            return 0.0
        if m == 1:
            return 1.0
        if m >= self.prior.max_segments:
            return 0.0
        return self.cfg.prob_birth

    def p_death(self, m: int) -> float:
        if self.prior.max_segments == 1 or m == 1:
            return 0.0
        if m >= self.prior.max_segments:
            return 1.0
        return 1.0 - self.cfg.prob_birth

    def splittable_segments(self, delta) -> list[int]:
        n_min = self.prior.n_min
        return [q for q in range(1, len(delta)) if delta[q] - delta[q - 1] >= 2 * n_min]

    def workspace(self, delta, q: int, lookup) -> SegWorkspace:
        seg = self.dft.get(delta[q - 1], delta[q])
        even, odd = bases_for_segment(seg, self.s)
        vectors = [lookup(c, q) for c in range(self.n_comp)]
        z, logpsi = segment_fields(seg.y, even, odd, vectors, self.n_dim)
        return SegWorkspace(q, seg.start, seg.end, seg.freqs, even, odd, seg.y, z, logpsi)

    @staticmethod
    def make_lookup(run_map: ComponentRunMap, vectors, overrides=None):
        def lookup(c, q):
            r = run_map.run_of(c, q)
            if overrides is not None:
                hit = overrides.get((c, r))
                if hit is not None:
                    return hit
            return vectors[c][r]
        return lookup

    def coeff_logprior(self, comp, vec, lam2: float) -> float:
        return gaussian_logpdf_diag(
            vec, prior_variances(comp, self.s, lam2, self.prior.sigma_alpha_sq)
        )

    def block_proposal(self, ws_list, comp, cur_vecs, lam2, warm) -> GaussianProposal:
        pot = block_potential(ws_list, comp, cur_vecs, lam2, self.s,
                              self.prior.sigma_alpha_sq)
        return laplace_proposal(pot, warm, newton_steps=self.cfg.newton_steps)

    def build_state(self, delta, phi, vectors, lambdas, seg_loglik, iteration=-1) -> ChainState:
        partition = Partition(delta=tuple(delta), phi=tuple(phi), n_dim=self.n_dim)
        coeffs = SegmentCoefficients(
            n_dim=self.n_dim, s_trunc=self.s,
            vectors=tuple(tuple(per) for per in vectors),
            lambdas=tuple(tuple(per) for per in lambdas),
        )
        arr = np.asarray(seg_loglik, dtype=float).copy()
        if not np.all(np.isfinite(arr)):
            raise InvalidStateError("non-finite segment log-likelihood in chain state")
        arr.setflags(write=False)
        return ChainState(partition=partition, coeffs=coeffs, seg_loglik=arr,
                          iteration=iteration)

    def initial_state(self) -> ChainState:
        delta = (0, self.series.n_samples)
        phi = ()
        lam0 = self.prior.kappa / 2.0
        vectors = [[np.zeros(self.s)] for _ in range(self.n_comp)]
        lambdas = [[lam0] for _ in range(self.n_comp)]
        run_map = component_runs(Partition(delta=delta, phi=phi, n_dim=self.n_dim))
        lookup = self.make_lookup(run_map, vectors)
        ws = self.workspace(delta, 1, lookup)
        if not self.cfg.flat_likelihood:
            # deterministic warm start: one sweep of conditional modes
            for c, comp in enumerate(self.comps):
                prop = self.block_proposal([ws], comp, [vectors[c][0]], lam0,
                                           warm=vectors[c][0])
                new = prop.mean
                if comp.kind == model.KIND_LOGPSI:
                    ws.apply_psi_change(comp, new)
                else:
                    ws.apply_theta_change(comp, vectors[c][0], new)
                vectors[c][0] = new
        lookup = self.make_lookup(run_map, vectors)
        ws = self.workspace(delta, 1, lookup)
        return self.build_state(delta, phi, vectors, lambdas, [ws.loglik()])

    # ------------------------------------------------------------- HMC + Gibbs

    def hmc_update(self, state: ChainState, eps: float, rng) -> tuple[ChainState, float]:
        """Leapfrog updates of every component-run block, random order."""
        run_map = component_runs(state.partition)
        vectors = [list(per) for per in state.coeffs.vectors]
        lambdas = state.coeffs.lambdas
        m = state.m
        lookup = self.make_lookup(run_map, vectors)
        ws = {q: self.workspace(state.partition.delta, q, lookup)
              for q in range(1, m + 1)}
        blocks = [(c, r) for c in range(self.n_comp) for r in range(run_map.n_runs(c))]
        order = rng.permutation(len(blocks))
        probs = []
        for idx in order:
            c, r = blocks[int(idx)]
            comp = self.comps[c]
            a, b = run_map.runs[c][r]
            ws_list = [ws[q] for q in range(a, b + 1)]
            cur = vectors[c][r]
            pot = block_potential(ws_list, comp, [cur] * len(ws_list), lambdas[c][r],
                                  self.s, self.prior.sigma_alpha_sq)
            eps_traj = eps * (1.0 + self.cfg.step_size_jitter * rng.uniform(-1.0, 1.0))
            new, prob, diverged = hmc_trajectory(pot, cur, eps_traj,
                                                 self.cfg.leapfrog_steps, rng)
            probs.append(prob)
            self.diag.proposed["hmc"] += 1
            if diverged:
                self.diag.hmc_divergences += 1
            if new is not None:
                self.diag.accepted["hmc"] += 1
                if comp.kind == model.KIND_LOGPSI:
                    for w in ws_list:
                        w.apply_psi_change(comp, new)
                else:
                    for w in ws_list:
                        w.apply_theta_change(comp, cur, new)
                vectors[c][r] = new
        # rebuild fields from scratch so the cached log-likelihood is exact
        lookup = self.make_lookup(run_map, vectors)
        seg_ll = np.empty(m)
        for q in range(1, m + 1):
            w = self.workspace(state.partition.delta, q, lookup)
            self.diag.clamp_events += int(np.sum(np.abs(w.logpsi) > model.LOGPSI_CLAMP))
            seg_ll[q - 1] = w.loglik()
        new_state = self.build_state(state.partition.delta, state.partition.phi,
                                     vectors, [list(per) for per in lambdas], seg_ll,
                                     iteration=state.iteration)
        return new_state, float(np.mean(probs)) if probs else 1.0

    def gibbs_lambda_update(self, state: ChainState, rng) -> ChainState:
        """Refresh every smoothing parameter; the likelihood cache is untouched."""
        notes: list = []
        lambdas = []
        for c, comp in enumerate(self.comps):
            per = []
            for vec in state.coeffs.vectors[c]:
                scaled = vec[1:] if comp.is_even else vec
                per.append(sample_lambda_conditional(
                    scaled, "even" if comp.is_even else "odd",
                    self.prior.kappa, rng, notes=notes))
            lambdas.append(per)
        self.diag.lambda_fallbacks += len(notes)
        coeffs = SegmentCoefficients(
            n_dim=self.n_dim, s_trunc=self.s,
            vectors=state.coeffs.vectors,
            lambdas=tuple(tuple(per) for per in lambdas),
        )
        return ChainState(partition=state.partition, coeffs=coeffs,
                          seg_loglik=state.seg_loglik, iteration=state.iteration)

    # ------------------------------------------------------------------ moves

    def birth_move(self, state: ChainState, rng) -> ChainState:
        delta, phi = state.partition.delta, state.partition.phi
        m = state.m
        splittable = self.splittable_segments(delta)
        if m >= self.prior.max_segments or not splittable:
            self.diag.skipped["birth"] += 1
            return state
        self.diag.proposed["birth"] += 1
        n_min = self.prior.n_min

        q0 = splittable[int(rng.integers(len(splittable)))]
        lo, hi = delta[q0 - 1] + n_min, delta[q0] - n_min
        t_new = int(rng.integers(lo, hi + 1))
        bits = int(rng.integers(1, 2 ** self.n_comp))
        phi_new = frozenset(i for i in range(self.n_comp) if (bits >> i) & 1)

        run_map = component_runs(state.partition)
        split_info = {}
        ok = True
        for c in sorted(phi_new):
            r = run_map.run_of(c, q0)
            lam_old = state.coeffs.lambdas[c][r]
            u = rng.uniform()
            if not (0.0 < u < 1.0):
                ok = False
                continue
            lam_l, lam_r = split_lambda(lam_old, u)
            if not (0.0 < lam_l <= self.prior.kappa and 0.0 < lam_r <= self.prior.kappa):
                ok = False
            split_info[c] = (r, u, lam_old, lam_l, lam_r)
        if not ok:
            return state

        new_delta = delta[:q0] + (t_new,) + delta[q0:]
        new_phi = phi[: q0 - 1] + (phi_new,) + phi[q0 - 1 :]
        new_partition = Partition(delta=new_delta, phi=new_phi, n_dim=self.n_dim)
        new_run_map = component_runs(new_partition)

        spans_old = {c: run_map.runs[c][split_info[c][0]] for c in split_info}
        old_segs = sorted({q0}.union(*[set(range(a, b + 1)) for a, b in spans_old.values()]))
        new_segs = sorted({(q if q < q0 else q + 1) for q in old_segs if q != q0} | {q0, q0 + 1})

        # forward base: split partition, every component inherits its old vector
        inh_vectors = []
        inh_lambdas = []
        for c in range(self.n_comp):
            vecs = list(state.coeffs.vectors[c])
            lams = list(state.coeffs.lambdas[c])
            if c in split_info:
                r, u, lam_old, lam_l, lam_r = split_info[c]
                vecs[r : r + 1] = [vecs[r], vecs[r]]
                lams[r : r + 1] = [lam_l, lam_r]
            inh_vectors.append(vecs)
            inh_lambdas.append(lams)
        fwd_lookup = self.make_lookup(new_run_map, inh_vectors)
        fwd_ws = {q: self.workspace(new_delta, q, fwd_lookup) for q in new_segs}

        log_q_fwd = 0.0
        prop_vectors = [list(per) for per in inh_vectors]
        d_coeff_prior = 0.0
        for c in sorted(phi_new):
            comp = self.comps[c]
            r, u, lam_old, lam_l, lam_r = split_info[c]
            a, b = spans_old[c]
            old_vec = state.coeffs.vectors[c][r]
            left_ws = [fwd_ws[q] for q in range(a, q0 + 1)]
            right_ws = [fwd_ws[q] for q in range(q0 + 1, b + 2)]
            prop_l = self.block_proposal(left_ws, comp, [old_vec] * len(left_ws),
                                         lam_l, warm=old_vec)
            vec_l = prop_l.sample(rng)
            log_q_fwd += prop_l.logpdf(vec_l)
            prop_r = self.block_proposal(right_ws, comp, [old_vec] * len(right_ws),
                                         lam_r, warm=old_vec)
            vec_r = prop_r.sample(rng)
            log_q_fwd += prop_r.logpdf(vec_r)
            prop_vectors[c][r] = vec_l
            prop_vectors[c][r + 1] = vec_r
            d_coeff_prior += (self.coeff_logprior(comp, vec_l, lam_l)
                              + self.coeff_logprior(comp, vec_r, lam_r)
                              - self.coeff_logprior(comp, old_vec, lam_old))

        # proposed per-segment log-likelihoods on the affected segments
        prop_lookup = self.make_lookup(new_run_map, prop_vectors)
        new_ll = {}
        for q in new_segs:
            w = self.workspace(new_delta, q, prop_lookup)
            new_ll[q] = w.loglik()
        d_loglik = sum(new_ll.values()) - sum(state.seg_loglik[q - 1] for q in old_segs)

        # reverse direction: the death move that would merge the new breakpoint
        rev_overrides = {}
        warm_merged = {}
        for c in sorted(phi_new):
            r, u, lam_old, lam_l, lam_r = split_info[c]
            a, b = spans_old[c]
            w_left = new_delta[q0] - new_delta[a - 1]
            w_right = new_delta[b + 1] - new_delta[q0]
            warm = (w_left * prop_vectors[c][r] + w_right * prop_vectors[c][r + 1]) / (
                w_left + w_right)
            warm_merged[c] = warm
            rev_overrides[(c, r)] = warm
        rev_lookup = self.make_lookup(run_map, [list(p) for p in state.coeffs.vectors],
                                      overrides=rev_overrides)
        rev_ws = {q: self.workspace(delta, q, rev_lookup) for q in old_segs}
        log_q_rev = 0.0
        for c in sorted(phi_new):
            comp = self.comps[c]
            r, u, lam_old, lam_l, lam_r = split_info[c]
            a, b = spans_old[c]
            merged_ws = [rev_ws[q] for q in range(a, b + 1)]
            prop_m = self.block_proposal(merged_ws, comp,
                                         [warm_merged[c]] * len(merged_ws),
                                         lam_old, warm=warm_merged[c])
            log_q_rev += prop_m.logpdf(state.coeffs.vectors[c][r])

        d_partition = (log_prior_partition(m + 1, new_delta, self.prior)
                       - log_prior_partition(m, delta, self.prior))
        n_subsets = 2 ** self.n_comp - 1
        d_phi = -math.log(n_subsets)
        d_lambda = -len(phi_new) * math.log(self.prior.kappa)
        log_fwd_sel = (math.log(self.p_birth(m)) - math.log(len(splittable))
                       - math.log(hi - lo + 1) - math.log(n_subsets))
        log_rev_sel = math.log(self.p_death(m + 1)) - math.log(m)
        log_jac = sum(log_split_jacobian(split_info[c][2], split_info[c][1])
                      for c in sorted(phi_new))

        log_acc = (d_loglik + d_partition + d_phi + d_coeff_prior + d_lambda
                   + (log_rev_sel + log_q_rev) - (log_fwd_sel + log_q_fwd) + log_jac)
        if not np.isfinite(log_acc) or math.log(max(rng.uniform(), 1e-300)) >= log_acc:
            return state

        self.diag.accepted["birth"] += 1
        seg_ll = np.empty(m + 1)
        for q_new in range(1, m + 2):
            if q_new in new_ll:
                seg_ll[q_new - 1] = new_ll[q_new]
            else:
                q_old = q_new if q_new < q0 else q_new - 1
                seg_ll[q_new - 1] = state.seg_loglik[q_old - 1]
        return self.build_state(new_delta, new_phi, prop_vectors, inh_lambdas, seg_ll,
                                iteration=state.iteration)

    def death_move(self, state: ChainState, rng) -> ChainState:
        delta, phi = state.partition.delta, state.partition.phi
        m = state.m
        if m <= 1:
            self.diag.skipped["death"] += 1
            return state
        self.diag.proposed["death"] += 1
        n_min = self.prior.n_min

        q0 = int(rng.integers(1, m))  # breakpoint index 1..m-1
        phi_q = phi[q0 - 1]
        run_map = component_runs(state.partition)

        merge_info = {}
        for c in sorted(phi_q):
            r_l = run_map.run_of(c, q0)
            r_r = r_l + 1
            lam_l = state.coeffs.lambdas[c][r_l]
            lam_r = state.coeffs.lambdas[c][r_r]
            lam_m = merge_lambda(lam_l, lam_r)
            u = split_fraction(lam_l, lam_r)
            merge_info[c] = (r_l, u, lam_m, lam_l, lam_r)

        new_delta = delta[:q0] + delta[q0 + 1 :]
        new_phi = phi[: q0 - 1] + phi[q0:]
        new_partition = Partition(delta=new_delta, phi=new_phi, n_dim=self.n_dim)
        new_run_map = component_runs(new_partition)

        spans_old = {}
        for c in merge_info:
            r_l = merge_info[c][0]
            a, _ = run_map.runs[c][r_l]
            _, b = run_map.runs[c][r_l + 1]
            spans_old[c] = (a, b)
        old_segs = sorted({q0, q0 + 1}.union(
            *[set(range(a, b + 1)) for a, b in spans_old.values()]))
        new_segs = sorted({(q if q <= q0 else q - 1) for q in old_segs})

        # forward base: merged partition, merged components carry warm averages
        warm_merged = {}
        merged_vectors = []
        merged_lambdas = []
        for c in range(self.n_comp):
            vecs = list(state.coeffs.vectors[c])
            lams = list(state.coeffs.lambdas[c])
            if c in merge_info:
                r_l, u, lam_m, lam_l, lam_r = merge_info[c]
                a, b = spans_old[c]
                w_left = delta[q0] - delta[a - 1]
                w_right = delta[b] - delta[q0]
                warm = (w_left * vecs[r_l] + w_right * vecs[r_l + 1]) / (w_left + w_right)
                warm_merged[c] = warm
                vecs[r_l : r_l + 2] = [warm]
                lams[r_l : r_l + 2] = [lam_m]
            merged_vectors.append(vecs)
            merged_lambdas.append(lams)
        fwd_lookup = self.make_lookup(new_run_map, merged_vectors)
        fwd_ws = {q: self.workspace(new_delta, q, fwd_lookup) for q in new_segs}

        log_q_fwd = 0.0
        d_coeff_prior = 0.0
        prop_vectors = [list(per) for per in merged_vectors]
        for c in sorted(phi_q):
            comp = self.comps[c]
            r_l, u, lam_m, lam_l, lam_r = merge_info[c]
            a, b = spans_old[c]
            merged_ws = [fwd_ws[q] for q in range(a, b)]  # new indexing: a..b-1
            prop_m = self.block_proposal(merged_ws, comp,
                                         [warm_merged[c]] * len(merged_ws),
                                         lam_m, warm=warm_merged[c])
            vec_m = prop_m.sample(rng)
            log_q_fwd += prop_m.logpdf(vec_m)
            prop_vectors[c][r_l] = vec_m
            d_coeff_prior += (self.coeff_logprior(comp, vec_m, lam_m)
                              - self.coeff_logprior(comp, state.coeffs.vectors[c][r_l], lam_l)
                              - self.coeff_logprior(comp, state.coeffs.vectors[c][r_l + 1], lam_r))

        prop_lookup = self.make_lookup(new_run_map, prop_vectors)
        new_ll = {}
        for q in new_segs:
            w = self.workspace(new_delta, q, prop_lookup)
            new_ll[q] = w.loglik()
        d_loglik = sum(new_ll.values()) - sum(state.seg_loglik[q - 1] for q in old_segs)

        # reverse direction: the birth that would re-split at this breakpoint
        rev_overrides = {}
        for c in sorted(phi_q):
            r_l = merge_info[c][0]
            rev_overrides[(c, r_l)] = prop_vectors[c][r_l]
            rev_overrides[(c, r_l + 1)] = prop_vectors[c][r_l]
        rev_lookup = self.make_lookup(run_map, [list(p) for p in state.coeffs.vectors],
                                      overrides=rev_overrides)
        rev_ws = {q: self.workspace(delta, q, rev_lookup) for q in old_segs}
        log_q_rev = 0.0
        for c in sorted(phi_q):
            comp = self.comps[c]
            r_l, u, lam_m, lam_l, lam_r = merge_info[c]
            a, b = spans_old[c]
            vec_m = prop_vectors[c][r_l]
            left_ws = [rev_ws[q] for q in range(a, q0 + 1)]
            right_ws = [rev_ws[q] for q in range(q0 + 1, b + 1)]
            prop_l = self.block_proposal(left_ws, comp, [vec_m] * len(left_ws),
                                         lam_l, warm=vec_m)
            log_q_rev += prop_l.logpdf(state.coeffs.vectors[c][r_l])
            prop_r = self.block_proposal(right_ws, comp, [vec_m] * len(right_ws),
                                         lam_r, warm=vec_m)
            log_q_rev += prop_r.logpdf(state.coeffs.vectors[c][r_l + 1])

        d_partition = (log_prior_partition(m - 1, new_delta, self.prior)
                       - log_prior_partition(m, delta, self.prior))
        n_subsets = 2 ** self.n_comp - 1
        d_phi = math.log(n_subsets)
        d_lambda = len(phi_q) * math.log(self.prior.kappa)
        log_fwd_sel = math.log(self.p_death(m)) - math.log(m - 1)
        merged_len = new_delta[q0] - new_delta[q0 - 1]
        log_rev_sel = (math.log(self.p_birth(m - 1))
                       - math.log(len(self.splittable_segments(new_delta)))
                       - math.log(merged_len - 2 * n_min + 1) - math.log(n_subsets))
        log_jac = sum(-log_split_jacobian(info[2], info[1]) for info in merge_info.values())

        log_acc = (d_loglik + d_partition + d_phi + d_coeff_prior + d_lambda
                   + (log_rev_sel + log_q_rev) - (log_fwd_sel + log_q_fwd) + log_jac)
        if not np.isfinite(log_acc) or math.log(max(rng.uniform(), 1e-300)) >= log_acc:
            return state

        self.diag.accepted["death"] += 1
        seg_ll = np.empty(m - 1)
        for q_new in range(1, m):
            if q_new in new_ll:
                seg_ll[q_new - 1] = new_ll[q_new]
            else:
                q_old = q_new if q_new < q0 else q_new + 1
                seg_ll[q_new - 1] = state.seg_loglik[q_old - 1]
        return self.build_state(new_delta, new_phi, prop_vectors, merged_lambdas, seg_ll,
                                iteration=state.iteration)

    def relocate_move(self, state: ChainState, rng) -> ChainState:
        delta, phi = state.partition.delta, state.partition.phi
        m = state.m
        if m <= 1:
            self.diag.skipped["relocate"] += 1
            return state
        self.diag.proposed["relocate"] += 1
        n_min = self.prior.n_min

        q0 = int(rng.integers(1, m))
        t_old = delta[q0]
        lo, hi = delta[q0 - 1] + n_min, delta[q0 + 1] - n_min
        window = self.cfg.relocate_window

        def window_bounds(t):
            return max(lo, t - window), min(hi, t + window)

        if rng.uniform() < self.cfg.relocate_local_prob:
            wlo, whi = window_bounds(t_old)
            t_new = int(rng.integers(wlo, whi + 1))
        else:
            t_new = int(rng.integers(lo, hi + 1))

        def log_move_density(src, dst):
            dens = (1.0 - self.cfg.relocate_local_prob) / (hi - lo + 1)
            wlo, whi = window_bounds(src)
            if wlo <= dst <= whi:
                dens += self.cfg.relocate_local_prob / (whi - wlo + 1)
            return math.log(dens)

        run_map = component_runs(state.partition)
        blocks = [(c, r) for c in range(self.n_comp) for r in range(run_map.n_runs(c))
                  if not (run_map.runs[c][r][1] < q0 or run_map.runs[c][r][0] > q0 + 1)]
        segs = sorted({q0, q0 + 1}.union(
            *[set(range(run_map.runs[c][r][0], run_map.runs[c][r][1] + 1))
              for c, r in blocks]))

        new_delta = delta[:q0] + (t_new,) + delta[q0 + 1 :]

        fwd_lookup = self.make_lookup(run_map, state.coeffs.vectors)
        fwd_ws = {q: self.workspace(new_delta, q, fwd_lookup) for q in segs}
        log_q_fwd = 0.0
        d_coeff_prior = 0.0
        prop_vectors = [list(per) for per in state.coeffs.vectors]
        for c, r in blocks:
            comp = self.comps[c]
            a, b = run_map.runs[c][r]
            old_vec = state.coeffs.vectors[c][r]
            lam2 = state.coeffs.lambdas[c][r]
            ws_list = [fwd_ws[q] for q in range(a, b + 1)]
            prop = self.block_proposal(ws_list, comp, [old_vec] * len(ws_list),
                                       lam2, warm=old_vec)
            new_vec = prop.sample(rng)
            log_q_fwd += prop.logpdf(new_vec)
            prop_vectors[c][r] = new_vec
            d_coeff_prior += (self.coeff_logprior(comp, new_vec, lam2)
                              - self.coeff_logprior(comp, old_vec, lam2))

        prop_lookup = self.make_lookup(run_map, prop_vectors)
        new_ll = {}
        for q in segs:
            w = self.workspace(new_delta, q, prop_lookup)
            new_ll[q] = w.loglik()
        d_loglik = sum(new_ll.values()) - sum(state.seg_loglik[q - 1] for q in segs)

        rev_ws = {q: self.workspace(delta, q, prop_lookup) for q in segs}
        log_q_rev = 0.0
        for c, r in blocks:
            comp = self.comps[c]
            a, b = run_map.runs[c][r]
            new_vec = prop_vectors[c][r]
            lam2 = state.coeffs.lambdas[c][r]
            ws_list = [rev_ws[q] for q in range(a, b + 1)]
            prop = self.block_proposal(ws_list, comp, [new_vec] * len(ws_list),
                                       lam2, warm=new_vec)
            log_q_rev += prop.logpdf(state.coeffs.vectors[c][r])

        d_partition = (log_prior_partition(m, new_delta, self.prior)
                       - log_prior_partition(m, delta, self.prior))
        log_acc = (d_loglik + d_partition + d_coeff_prior
                   + log_q_rev - log_q_fwd
                   + log_move_density(t_new, t_old) - log_move_density(t_old, t_new))
        if not np.isfinite(log_acc) or math.log(max(rng.uniform(), 1e-300)) >= log_acc:
            return state

        self.diag.accepted["relocate"] += 1
        seg_ll = state.seg_loglik.copy()
        for q in segs:
            seg_ll[q - 1] = new_ll[q]
        return self.build_state(new_delta, phi, prop_vectors,
                                [list(per) for per in state.coeffs.lambdas], seg_ll,
                                iteration=state.iteration)

    def changeset_move(self, state: ChainState, rng) -> ChainState:
        """Toggle one component's membership in one breakpoint's change-set.

        Adding the component splits its run at the breakpoint (smoothing
        parameter split, both sides redrawn); removing it merges the two runs.
        Breakpoints and segment count stay fixed, so this is the move that
        lets a change migrate between nearby breakpoints; without it the
        change-sets drawn at birth are frozen until their breakpoint dies.
        The selection probabilities of the two directions cancel, as does the
        change-set prior (uniform over nonempty sets).
        """
        delta, phi = state.partition.delta, state.partition.phi
        m = state.m
        if m <= 1:
            self.diag.skipped["changeset"] += 1
            return state
        q0 = int(rng.integers(1, m))
        c = int(rng.integers(self.n_comp))
        comp = self.comps[c]
        phi_q = phi[q0 - 1]
        run_map = component_runs(state.partition)
        vectors = [list(per) for per in state.coeffs.vectors]
        lambdas = [list(per) for per in state.coeffs.lambdas]

        if c in phi_q:
            # merge direction; the breakpoint must keep a nonempty change-set
            if len(phi_q) == 1:
                self.diag.skipped["changeset"] += 1
                return state
            self.diag.proposed["changeset"] += 1
            r_l = run_map.run_of(c, q0)
            a, _ = run_map.runs[c][r_l]
            _, b = run_map.runs[c][r_l + 1]
            lam_l, lam_r = lambdas[c][r_l], lambdas[c][r_l + 1]
            lam_m = merge_lambda(lam_l, lam_r)
            u = split_fraction(lam_l, lam_r)
            vec_l, vec_r = vectors[c][r_l], vectors[c][r_l + 1]
            w_left = delta[q0] - delta[a - 1]
            w_right = delta[b] - delta[q0]
            warm = (w_left * vec_l + w_right * vec_r) / (w_left + w_right)

            fwd_overrides = {(c, r_l): warm, (c, r_l + 1): warm}
            fwd_lookup = self.make_lookup(run_map, vectors, overrides=fwd_overrides)
            fwd_ws = {q: self.workspace(delta, q, fwd_lookup) for q in range(a, b + 1)}
            prop_m = self.block_proposal(list(fwd_ws.values()), comp,
                                         [warm] * (b - a + 1), lam_m, warm=warm)
            vec_m = prop_m.sample(rng)
            log_q_fwd = prop_m.logpdf(vec_m)

            rev_overrides = {(c, r_l): vec_m, (c, r_l + 1): vec_m}
            rev_lookup = self.make_lookup(run_map, vectors, overrides=rev_overrides)
            rev_ws = {q: self.workspace(delta, q, rev_lookup) for q in range(a, b + 1)}
            prop_l = self.block_proposal([rev_ws[q] for q in range(a, q0 + 1)], comp,
                                         [vec_m] * (q0 - a + 1), lam_l, warm=vec_m)
            prop_r = self.block_proposal([rev_ws[q] for q in range(q0 + 1, b + 1)], comp,
                                         [vec_m] * (b - q0), lam_r, warm=vec_m)
            log_q_rev = prop_l.logpdf(vec_l) + prop_r.logpdf(vec_r)

            vectors[c][r_l : r_l + 2] = [vec_m]
            lambdas[c][r_l : r_l + 2] = [lam_m]
            new_phi = phi[: q0 - 1] + (phi_q - {c},) + phi[q0:]
            d_coeff_prior = (self.coeff_logprior(comp, vec_m, lam_m)
                             - self.coeff_logprior(comp, vec_l, lam_l)
                             - self.coeff_logprior(comp, vec_r, lam_r))
            d_lambda = math.log(self.prior.kappa)
            log_jac = -log_split_jacobian(lam_m, u)
        else:
            self.diag.proposed["changeset"] += 1
            r = run_map.run_of(c, q0)
            a, b = run_map.runs[c][r]
            lam_old = lambdas[c][r]
            u = rng.uniform()
            if not (0.0 < u < 1.0):
                return state
            lam_l, lam_r = split_lambda(lam_old, u)
            if not (0.0 < lam_l <= self.prior.kappa and 0.0 < lam_r <= self.prior.kappa):
                return state
            old_vec = vectors[c][r]

            fwd_lookup = self.make_lookup(run_map, vectors)
            fwd_ws = {q: self.workspace(delta, q, fwd_lookup) for q in range(a, b + 1)}
            prop_l = self.block_proposal([fwd_ws[q] for q in range(a, q0 + 1)], comp,
                                         [old_vec] * (q0 - a + 1), lam_l, warm=old_vec)
            vec_l = prop_l.sample(rng)
            prop_r = self.block_proposal([fwd_ws[q] for q in range(q0 + 1, b + 1)], comp,
                                         [old_vec] * (b - q0), lam_r, warm=old_vec)
            vec_r = prop_r.sample(rng)
            log_q_fwd = prop_l.logpdf(vec_l) + prop_r.logpdf(vec_r)

            w_left = delta[q0] - delta[a - 1]
            w_right = delta[b] - delta[q0]
            warm = (w_left * vec_l + w_right * vec_r) / (w_left + w_right)
            rev_overrides = {(c, r): warm}
            rev_lookup = self.make_lookup(run_map, vectors, overrides=rev_overrides)
            rev_ws = {q: self.workspace(delta, q, rev_lookup) for q in range(a, b + 1)}
            prop_m = self.block_proposal(list(rev_ws.values()), comp,
                                         [warm] * (b - a + 1), lam_old, warm=warm)
            log_q_rev = prop_m.logpdf(old_vec)

            vectors[c][r : r + 1] = [vec_l, vec_r]
            lambdas[c][r : r + 1] = [lam_l, lam_r]
            new_phi = phi[: q0 - 1] + (phi_q | {c},) + phi[q0:]
            d_coeff_prior = (self.coeff_logprior(comp, vec_l, lam_l)
                             + self.coeff_logprior(comp, vec_r, lam_r)
                             - self.coeff_logprior(comp, old_vec, lam_old))
            d_lambda = -math.log(self.prior.kappa)
            log_jac = log_split_jacobian(lam_old, u)

        new_run_map = component_runs(Partition(delta=delta, phi=new_phi,
                                               n_dim=self.n_dim))
        prop_lookup = self.make_lookup(new_run_map, vectors)
        new_ll = {}
        for q in range(a, b + 1):
            new_ll[q] = self.workspace(delta, q, prop_lookup).loglik()
        d_loglik = sum(new_ll.values()) - sum(state.seg_loglik[q - 1]
                                              for q in range(a, b + 1))

        log_acc = (d_loglik + d_coeff_prior + d_lambda
                   + log_q_rev - log_q_fwd + log_jac)
        if not np.isfinite(log_acc) or math.log(max(rng.uniform(), 1e-300)) >= log_acc:
            return state

        self.diag.accepted["changeset"] += 1
        seg_ll = state.seg_loglik.copy()
        for q in range(a, b + 1):
            seg_ll[q - 1] = new_ll[q]
        return self.build_state(delta, new_phi, vectors, lambdas, seg_ll,
                                iteration=state.iteration)

    def between_move(self, state: ChainState, rng) -> ChainState:
        if self.prior.max_segments == 1:
            return state
        if rng.uniform() < self.p_birth(state.m):
            return self.birth_move(state, rng)
        return self.death_move(state, rng)

    # -------------------------------------------------------------------- run

    def consistency_check(self, state: ChainState) -> None:
        fresh = whittle_loglik(self.dft.dft_set(state.partition), state.coeffs,
                               state.partition)
        drift = abs(fresh - state.loglik)
        self.diag.consistency_checks += 1
        self.diag.max_loglik_drift = max(self.diag.max_loglik_drift, drift)
        if drift > 1e-6:
            raise InvalidStateError(
                f"cached log-likelihood drifted by {drift} at iteration {state.iteration}"
            )

    def run(self) -> tuple[list[ChainState], MoveDiagnostics]:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        state = self.initial_state()
        da = DualAveraging(cfg.step_size, target=cfg.target_accept)
        eps = cfg.step_size
        snapshots: list[ChainState] = []
        t_start = time.perf_counter()
        iter_seconds = np.empty(cfg.iterations)
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            state = self.between_move(state, rng)
            state = self.changeset_move(state, rng) if state.m > 1 else state
            state = self.relocate_move(state, rng) if state.m > 1 else state
            state, accept_mean = self.hmc_update(state, eps, rng)
            state = self.gibbs_lambda_update(state, rng)
            state = dc_replace(state, iteration=it)
            if it < cfg.burn_in:
                da.update(accept_mean)
                eps = da.current
                if it == cfg.burn_in - 1:
                    eps = da.smoothed
            if (it + 1) % cfg.consistency_check_every == 0:
                self.consistency_check(state)
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                snapshots.append(state)
            iter_seconds[it] = time.perf_counter() - t0
        self.diag.final_step_size = eps
        self.diag.total_seconds = time.perf_counter() - t_start
        self.diag.seconds_per_iteration = float(np.mean(iter_seconds))
        self.diag.seconds_per_iteration_sd = float(np.std(iter_seconds))
        return snapshots, self.diag


def run_chain(series: MultivariateSeries, prior_config: PriorConfig,
              sampler_config: SamplerConfig) -> tuple[list[ChainState], MoveDiagnostics]:
    """Run one chain; fully deterministic given the seed in ``sampler_config``."""
    engine = SamplerEngine(series, prior_config, sampler_config)
    return engine.run()
