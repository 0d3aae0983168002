"""Time marching: the four implicit-explicit Schwarz schemes.

Every step performs exactly one Poisson solve with lagged densities, then
updates the carriers:

* AS-IMIMEX: alternating Schwarz; diffusion, drift, and the own-density
  interface term implicit; recombination explicit.  The drift block couples
  the lagged field into the carrier matrices, so every step reassembles and
  refactorizes them.
* AS-IMEXEX: as above but the drift moves to the right-hand side with
  lagged densities; matrices still change per step through the interface
  trace coefficient (and the adaptive step size), so they are still
  refactorized each step.
* PS-IMEXEX: parallel Schwarz; interface, drift, and recombination all
  explicit with step k-1 data and a fixed step size, so all four carrier
  matrices are factorized exactly once.
* TsPS-IMEXEX: two-scale variant; each macro step advances the
  semiconductor with K substeps of dt_s (frozen field and electrolyte
  traces), then the electrolyte once with dt_e = K * dt_s.

In the alternating schemes the reductant update consumes the *fresh*
electron/hole traces and the oxidant update additionally the fresh
reductant trace, mirroring the sequential data flow.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from pecsolve import linalg
from pecsolve.basis import DGField, project_to_dg
from pecsolve.errors import ConfigError, DivergenceError
from pecsolve.mesh import Mesh1D
from pecsolve.physics import DopingProfile, MaterialParams, TransferModel, generation, srh
from pecsolve.poisson import MixedField, SaddleSystem, assemble_poisson, solve_potential
from pecsolve.profiler import Profiler
from pecsolve.transport import CarrierSpec, LDGOperators, carrier_operators

EPS_GUARD = 1e-30
SEMICONDUCTOR_SPECIES = ("n", "p")
ELECTROLYTE_SPECIES = ("r", "o")


class StepperKind(Enum):
    AS_IMIMEX = "as-imimex"
    AS_IMEXEX = "as-imexex"
    PS_IMEXEX = "ps-imexex"
    TSPS_IMEXEX = "tsps-imexex"

    @classmethod
    def parse(cls, name: str) -> "StepperKind":
        for kind in cls:
            if kind.value == name or kind.name.lower() == name.lower():
                return kind
        raise ConfigError(f"unknown stepper {name!r}")


@dataclass
class SimState:
    """Time index plus the four carrier fields, fluxes, and the mixed solve."""

    step: int
    t: float
    rho: dict[str, DGField]
    q: dict[str, DGField]
    mixed: MixedField | None = None

    def copy(self) -> "SimState":
        return SimState(
            step=self.step,
            t=self.t,
            rho={k: v.copy() for k, v in self.rho.items()},
            q={k: v.copy() for k, v in self.q.items()},
            mixed=self.mixed,
        )


@dataclass
class RunResult:
    state: SimState
    history: list[dict]
    converged: bool
    steps: int
    profiler: Profiler


class Simulation:
    """Static discretization objects plus per-scheme stepping logic."""

    def __init__(
        self,
        mesh: Mesh1D,
        params: MaterialParams,
        doping: DopingProfile,
        transfer: TransferModel,
        rho_n_e: float,
        rho_p_e: float,
        rho_r_inf: float,
        rho_o_inf: float,
        phi_app: float = 0.0,
        gamma: int = 0,
        degree: int = 1,
        tau_tilde: float = 1.0,
        beta: float = 0.5,
        c_cfl: float = 0.5,
        dt_cap: float = 1.0,
        dt_fixed: float | None = None,
        tol_ss: float = 1e-6,
        max_steps: int = 200_000,
        k_max_substeps: int = 10,
        divergence_factor: float = 1e6,
        frozen_redox: bool = False,
        rho_floor: float = 1e-8,
    ):
        self.mesh = mesh
        self.params = params
        self.doping = doping
        self.transfer = transfer
        self.bc = {"n": rho_n_e, "p": rho_p_e, "r": rho_r_inf, "o": rho_o_inf}
        self.phi_app = phi_app
        self.gamma = gamma
        self.degree = degree
        self.tau_tilde = tau_tilde
        self.beta = beta
        self.c_cfl = c_cfl
        self.dt_cap = dt_cap
        self.dt_fixed = dt_fixed
        self.tol_ss = tol_ss
        self.max_steps = max_steps
        self.k_max_substeps = k_max_substeps
        self.divergence_factor = divergence_factor
        self.rho_floor = rho_floor
        self.schottky = transfer.kind == "schottky"
        self.frozen_redox = frozen_redox or self.schottky
        self.n_threads = max(1, int(os.environ.get("PECSOLVE_THREADS", "1")))

        self.grid_s = mesh.semiconductor_grid()
        self.grid_e = mesh.electrolyte_grid()
        self.specs = {
            "n": CarrierSpec("n", "S", params.mu_n, params.drift_coefficient("n"), rho_n_e),
            "p": CarrierSpec("p", "S", params.mu_p, params.drift_coefficient("p"), rho_p_e),
            "r": CarrierSpec("r", "E", params.mu_r, params.drift_coefficient("r"), rho_r_inf),
            "o": CarrierSpec("o", "E", params.mu_o, params.drift_coefficient("o"), rho_o_inf),
        }
        self.ops: dict[str, LDGOperators] = {
            sp_name: carrier_operators(
                self.grid_s if spec.domain == "S" else self.grid_e,
                spec,
                tau_tilde=tau_tilde,
                beta=beta,
                degree=degree,
            )
            for sp_name, spec in self.specs.items()
        }
        self.poisson: SaddleSystem = assemble_poisson(
            mesh, params.lambda2_s, params.lambda2_e, degree=degree
        )
        # illumination enters at the interface end of the semiconductor and
        # travels toward the contact
        self.g_quad = generation(
            self.ops["n"].xq,
            sigma_a=params.sigma_a,
            g0=params.g0,
            x_entry=mesh.interface_x,
            direction=-1.0,
            gamma=1,
        )
        self.profiler = Profiler()
        self.last_diagnostics: dict = {}
        self._fixed_solvers: dict[str, linalg.Factorization] = {}
        self._fixed_dt: dict[str, float] = {}
        self._substep_count = 0

    # ------------------------------------------------------------------ setup

    @property
    def active_species(self) -> tuple[str, ...]:
        if self.frozen_redox:
            return SEMICONDUCTOR_SPECIES
        return SEMICONDUCTOR_SPECIES + ELECTROLYTE_SPECIES

    def initial_state(self) -> SimState:
        nd = lambda x: self.doping.eval(x)[0]
        rho = {
            "n": project_to_dg(nd, self.grid_s, self.degree),
            "p": project_to_dg(lambda x: np.full_like(x, self.bc["p"]), self.grid_s, self.degree),
            "r": project_to_dg(lambda x: np.full_like(x, self.bc["r"]), self.grid_e, self.degree),
            "o": project_to_dg(lambda x: np.full_like(x, self.bc["o"]), self.grid_e, self.degree),
        }
        q = {
            name: DGField.zeros(f.grid, self.degree) for name, f in rho.items()
        }
        return SimState(step=0, t=0.0, rho=rho, q=q, mixed=None)

    # ------------------------------------------------------------- primitives

    def solve_poisson(self, state: SimState) -> MixedField:
        # positive applied bias works against the built-in barrier, so it
        # enters the contact Dirichlet value with the opposite sign
        with self.profiler.section("sol_mfem"):
            return solve_potential(
                self.poisson, state.rho, self.doping, self.params, -self.phi_app
            )

    def _e_by_domain(self, mixed: MixedField) -> dict[str, np.ndarray]:
        n_s = self.mesh.n_semiconductor
        e_all = mixed.e_values(self.poisson.psi_table)
        return {"S": e_all[:n_s], "E": e_all[n_s:]}

    def interface_traces(self, state: SimState) -> dict[str, float]:
        return {
            "n": state.rho["n"].trace_right(),
            "p": state.rho["p"].trace_right(),
            "r": state.rho["r"].trace_left(),
            "o": state.rho["o"].trace_left(),
        }

    def _field_scale_bound(self) -> float:
        """A-priori |E| bound from the depletion-layer estimate.

        The cold-start field is far weaker than the developed one, so the
        CFL must not trust max|E^{k-1}| alone: a space-charge layer of net
        density rho over a drop dPhi carries |grad Phi| up to
        sqrt(2 rho dPhi) / lambda, i.e. |E| up to lambda sqrt(2 rho dPhi).
        The field is continuous across the interface, so the semiconductor
        bound covers both subdomains.
        """
        nd_vals = np.array([max(abs(s.n_d), abs(s.n_a), abs(s.n_d - s.n_a))
                            for s in self.doping.segments])
        rho_scale = max(float(nd_vals.max()), self.bc["n"], self.bc["p"], EPS_GUARD)
        barrier = self.params.phi_bi - self.phi_app - self.params.phi_inf
        # beyond flat band the interface accumulates carriers exponentially
        overdrive = max(0.0, -barrier)
        rho_scale *= float(np.exp(min(overdrive, 8.0)))
        dphi = max(abs(barrier), 1.0)
        return float(np.sqrt(self.params.lambda2_s) * np.sqrt(2.0 * rho_scale * dphi))

    def compute_cfl_dt(self, state: SimState, mixed: MixedField, scope: str = "global") -> float:
        """Adaptive step bound: drift transit and interface-rate constraints."""
        if scope == "global":
            dts = [self.compute_cfl_dt(state, mixed, "S")]
            if not self.frozen_redox:
                dts.append(self.compute_cfl_dt(state, mixed, "E"))
            return min(dts)
        if self.dt_fixed is not None:
            return self.dt_fixed
        e_dom = self._e_by_domain(mixed)[scope]
        e_max = float(np.max(np.abs(e_dom))) if e_dom.size else 0.0
        e_max = max(e_max, self._field_scale_bound())
        if scope == "S":
            grid, mu_max = self.grid_s, max(self.params.mu_n, self.params.mu_p)
            lam2 = self.params.lambda2_s
            species = SEMICONDUCTOR_SPECIES
        else:
            grid, mu_max = self.grid_e, max(self.params.mu_r, self.params.mu_o)
            lam2 = self.params.lambda2_e
            species = ELECTROLYTE_SPECIES
        dt_drift = grid.h_min / (mu_max * (e_max / lam2 + EPS_GUARD))
        if self.schottky:
            rate = max(self.transfer.v_n, self.transfer.v_p)
        else:
            traces = self.interface_traces(state)
            rho_max = max(max(v, 0.0) for v in traces.values())
            rate = max(self.transfer.k_et, self.transfer.k_ht) * rho_max
        dt_rate = 1.0 / (rate + EPS_GUARD)
        # time-lagged Poisson coupling is stable only below the dielectric
        # relaxation time lambda^2 / (mu * rho)
        rho_peak = max(
            float(np.max(np.abs(
                self.ops[spn].field_values_at_quadrature(state.rho[spn].coeffs)
            )))
            for spn in species
        )
        if scope == "S":
            barrier = self.params.phi_bi - self.phi_app - self.params.phi_inf
            rho_peak = max(
                rho_peak,
                self.bc["n"] * float(np.exp(min(max(0.0, -barrier), 8.0))),
            )
        dt_diel = lam2 / (mu_max * (rho_peak + EPS_GUARD))
        return min(self.c_cfl * min(dt_drift, dt_rate, dt_diel), self.dt_cap)

    def _recomb_quad(self, rho_n: DGField, rho_p: DGField) -> tuple[np.ndarray, int]:
        """R(rho_n, rho_p) - gamma*G at semiconductor quadrature points."""
        ops = self.ops["n"]
        nq = ops.field_values_at_quadrature(rho_n.coeffs)
        pq = self.ops["p"].field_values_at_quadrature(rho_p.coeffs)
        clamped = int(np.count_nonzero(nq < 0.0) + np.count_nonzero(pq < 0.0))
        r = srh(
            nq, pq, rho_i=self.params.rho_i, tau_n=self.params.tau_n, tau_p=self.params.tau_p
        )
        return r - self.gamma * self.g_quad, clamped

    def _negativity_fraction(self, state: SimState) -> float:
        neg = 0
        total = 0
        for name in self.active_species:
            vals = self.ops[name].field_values_at_quadrature(state.rho[name].coeffs)
            neg += int(np.count_nonzero(vals < 0.0))
            total += vals.size
        return neg / max(total, 1)

    def _solve_carrier(
        self, name: str, fact: linalg.Factorization, rhs_u: np.ndarray, rhs_q: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        ops = self.ops[name]
        with self.profiler.section("sol_ldg"):
            z = fact.solve(np.concatenate([rhs_u, rhs_q]))
        n = ops.n_dof
        nloc = self.degree + 1
        return z[:n].reshape(-1, nloc), z[n:].reshape(-1, nloc)

    def _factorize_carrier(
        self,
        name: str,
        dt: float,
        interface_coeff: float,
        drift: sp.spmatrix | None,
        inplace: bool = False,
    ) -> linalg.Factorization:
        ops = self.ops[name]
        with self.profiler.section("fact_ldg"):
            build = ops.build_system_inplace if inplace else ops.build_system
            system = build(dt, interface_coeff=interface_coeff, drift=drift)
            return linalg.factorize(system)

    # ----------------------------------------------------- interface couplings

    def _transfer_n(self, excess_n: float, trace_o: float) -> float:
        if self.schottky:
            return self.transfer.v_n * excess_n
        return self.transfer.k_et * excess_n * max(trace_o, 0.0)

    def _transfer_p(self, excess_p: float, trace_r: float) -> float:
        if self.schottky:
            return self.transfer.v_p * excess_p
        return self.transfer.k_ht * excess_p * max(trace_r, 0.0)

    def _self_rate_n(self, trace_o: float) -> float:
        """Coefficient of the implicit own-density interface term for electrons."""
        return self.transfer.v_n if self.schottky else self.transfer.k_et * max(trace_o, 0.0)

    def _self_rate_p(self, trace_r: float) -> float:
        return self.transfer.v_p if self.schottky else self.transfer.k_ht * max(trace_r, 0.0)

    # ------------------------------------------------------------------ steps

    def step(self, kind: StepperKind, state: SimState) -> SimState:
        if kind is StepperKind.AS_IMIMEX:
            return self.step_as_imimex(state)
        if kind is StepperKind.AS_IMEXEX:
            return self.step_as_imexex(state)
        if kind is StepperKind.PS_IMEXEX:
            return self.step_ps_imexex(state)
        if kind is StepperKind.TSPS_IMEXEX:
            return self.step_tsps_imexex(state)
        raise ConfigError(f"unknown stepper kind {kind}")

    def _step_alternating(self, state: SimState, drift_implicit: bool) -> SimState:
        mixed = self.solve_poisson(state)
        dt = self.dt_fixed or self.compute_cfl_dt(state, mixed, "global")
        e_dom = self._e_by_domain(mixed)
        lag = self.interface_traces(state)
        rtilde, clamped = self._recomb_quad(state.rho["n"], state.rho["p"])
        diagnostics: dict = {"dt": dt, "clamped_closure_points": clamped, "poisson_solves": 1}

        new_rho: dict[str, DGField] = {}
        new_q: dict[str, DGField] = {}

        with self.profiler.section("recom_term"):
            recomb_load = {
                spn: self.ops[spn].source_load(rtilde) for spn in SEMICONDUCTOR_SPECIES
            }

        # electrons and holes: implicit diffusion + implicit own-density interface
        for spn, counter in (("n", lag["o"]), ("p", lag["r"])):
            ops = self.ops[spn]
            spec = self.specs[spn]
            c_int = self._self_rate_n(counter) if spn == "n" else self._self_rate_p(counter)
            drift = None
            if drift_implicit:
                with self.profiler.section("drift_term"):
                    drift = ops.drift_matrix(spec.drift_coef, mixed)
                rhs_q = ops.b_m.copy()
            else:
                with self.profiler.section("drift_term"):
                    rhs_q = ops.b_m + ops.drift_load(
                        spec.drift_coef, e_dom["S"], state.rho[spn].coeffs
                    )
            fact = self._factorize_carrier(spn, dt, c_int, drift, inplace=True)
            rhs_u = state.rho[spn].coeffs.ravel() / dt + (
                ops.b_l + c_int * spec.dirichlet_value * ops.sigma_w - recomb_load[spn]
            )
            u, q = self._solve_carrier(spn, fact, rhs_u, rhs_q)
            new_rho[spn] = DGField(ops.grid, self.degree, u)
            new_q[spn] = DGField(ops.grid, self.degree, q)
            diagnostics[f"interface_coeff_{spn}"] = c_int

        exc_n = new_rho["n"].trace_right() - self.bc["n"]
        exc_p = new_rho["p"].trace_right() - self.bc["p"]
        diagnostics["i_et_from_n"] = self._transfer_n(exc_n, lag["o"])
        diagnostics["i_ht_from_p"] = self._transfer_p(exc_p, lag["r"])

        if self.frozen_redox:
            for spn in ELECTROLYTE_SPECIES:
                new_rho[spn] = state.rho[spn]
                new_q[spn] = state.q[spn]
        else:
            # reductant: implicit own-density I_ht with fresh hole excess,
            # source from the fresh electron excess and the lagged oxidant
            ops = self.ops["r"]
            spec = self.specs["r"]
            c_int = self.transfer.k_ht * exc_p
            with self.profiler.section("drift_term"):
                if drift_implicit:
                    drift = ops.drift_matrix(spec.drift_coef, mixed, elem_offset=self.mesh.n_semiconductor)
                    rhs_q = ops.b_m.copy()
                else:
                    drift = None
                    rhs_q = ops.b_m + ops.drift_load(
                        spec.drift_coef, e_dom["E"], state.rho["r"].coeffs
                    )
            fact = self._factorize_carrier("r", dt, c_int, drift, inplace=True)
            source_r = self._transfer_n(exc_n, lag["o"])
            rhs_u = state.rho["r"].coeffs.ravel() / dt + ops.b_l + source_r * ops.sigma_w
            u, q = self._solve_carrier("r", fact, rhs_u, rhs_q)
            new_rho["r"] = DGField(ops.grid, self.degree, u)
            new_q["r"] = DGField(ops.grid, self.degree, q)
            diagnostics["interface_coeff_r"] = c_int
            diagnostics["i_et_source_r"] = source_r

            # oxidant: implicit own-density I_et with fresh electron excess,
            # source from the fresh hole excess and the fresh reductant
            ops = self.ops["o"]
            spec = self.specs["o"]
            c_int = self.transfer.k_et * exc_n
            with self.profiler.section("drift_term"):
                if drift_implicit:
                    drift = ops.drift_matrix(spec.drift_coef, mixed, elem_offset=self.mesh.n_semiconductor)
                    rhs_q = ops.b_m.copy()
                else:
                    drift = None
                    rhs_q = ops.b_m + ops.drift_load(
                        spec.drift_coef, e_dom["E"], state.rho["o"].coeffs
                    )
            fact = self._factorize_carrier("o", dt, c_int, drift, inplace=True)
            trace_r_fresh = new_rho["r"].trace_left()
            source_o = self.transfer.k_ht * exc_p * max(trace_r_fresh, 0.0)
            rhs_u = state.rho["o"].coeffs.ravel() / dt + ops.b_l + source_o * ops.sigma_w
            u, q = self._solve_carrier("o", fact, rhs_u, rhs_q)
            new_rho["o"] = DGField(ops.grid, self.degree, u)
            new_q["o"] = DGField(ops.grid, self.degree, q)
            diagnostics["interface_coeff_o"] = c_int
            diagnostics["i_ht_source_o"] = source_o

        self.last_diagnostics = diagnostics
        return SimState(step=state.step + 1, t=state.t + dt, rho=new_rho, q=new_q, mixed=mixed)

    def step_as_imimex(self, state: SimState) -> SimState:
        return self._step_alternating(state, drift_implicit=True)

    def step_as_imexex(self, state: SimState) -> SimState:
        return self._step_alternating(state, drift_implicit=False)

    # parallel Schwarz -------------------------------------------------------

    def _ensure_fixed_solvers(self, state: SimState, kind: StepperKind) -> None:
        if self._fixed_solvers:
            return
        mixed = self.solve_poisson(state)
        dt_s = self.dt_fixed or self.compute_cfl_dt(state, mixed, "S")
        if kind is StepperKind.PS_IMEXEX:
            dt_e = dt_s if self.frozen_redox else min(
                dt_s, self.compute_cfl_dt(state, mixed, "E")
            )
            dt = min(dt_s, dt_e)
            self._fixed_dt = {"n": dt, "p": dt, "r": dt, "o": dt, "macro": dt, "K": 1}
        else:
            dt_e_raw = self.dt_cap if self.frozen_redox else self.compute_cfl_dt(state, mixed, "E")
            k_sub = int(np.clip(int(dt_e_raw / dt_s), 1, self.k_max_substeps))
            dt_e = k_sub * dt_s
            self._fixed_dt = {
                "n": dt_s, "p": dt_s, "r": dt_e, "o": dt_e, "macro": dt_e, "K": k_sub
            }
        for spn in self.active_species:
            self._fixed_solvers[spn] = self._factorize_carrier(
                spn, self._fixed_dt[spn], 0.0, None
            )

    def ldg_factorization(self, species: str) -> linalg.Factorization | None:
        """Cached constant-matrix factorization (parallel schemes only)."""
        return self._fixed_solvers.get(species)

    def _explicit_interface_values(self, traces: dict[str, float]) -> dict[str, float]:
        exc_n = traces["n"] - self.bc["n"]
        exc_p = traces["p"] - self.bc["p"]
        i_et = self._transfer_n(exc_n, traces.get("o", 0.0))
        i_ht = self._transfer_p(exc_p, traces.get("r", 0.0))
        return {"n": i_et, "p": i_ht, "r": i_ht - i_et, "o": i_et - i_ht}

    def step_ps_imexex(self, state: SimState, order: tuple[str, ...] | None = None) -> SimState:
        self._ensure_fixed_solvers(state, StepperKind.PS_IMEXEX)
        dt = self._fixed_dt["macro"]
        mixed = self.solve_poisson(state)
        e_dom = self._e_by_domain(mixed)
        traces = self.interface_traces(state)
        iface = self._explicit_interface_values(traces)
        rtilde, clamped = self._recomb_quad(state.rho["n"], state.rho["p"])
        diagnostics: dict = {
            "dt": dt, "clamped_closure_points": clamped, "poisson_solves": 1, "K": 1,
            "interface_loads": iface,
        }

        rhs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        with self.profiler.section("recom_term"):
            recomb_load = {
                spn: self.ops[spn].source_load(rtilde) for spn in SEMICONDUCTOR_SPECIES
            }
        for spn in self.active_species:
            ops = self.ops[spn]
            spec = self.specs[spn]
            dom = "S" if spec.domain == "S" else "E"
            with self.profiler.section("drift_term"):
                rhs_q = ops.b_m + ops.drift_load(
                    spec.drift_coef, e_dom[dom], state.rho[spn].coeffs
                )
            rhs_u = state.rho[spn].coeffs.ravel() / dt + ops.b_l - iface[spn] * ops.sigma_w
            if spn in SEMICONDUCTOR_SPECIES:
                rhs_u -= recomb_load[spn]
            rhs[spn] = (rhs_u, rhs_q)

        new_rho: dict[str, DGField] = {}
        new_q: dict[str, DGField] = {}
        for spn in order or self.active_species:
            ops = self.ops[spn]
            u, q = self._solve_carrier(spn, self._fixed_solvers[spn], *rhs[spn])
            new_rho[spn] = DGField(ops.grid, self.degree, u)
            new_q[spn] = DGField(ops.grid, self.degree, q)
        if self.frozen_redox:
            for spn in ELECTROLYTE_SPECIES:
                new_rho[spn] = state.rho[spn]
                new_q[spn] = state.q[spn]

        self.last_diagnostics = diagnostics
        return SimState(step=state.step + 1, t=state.t + dt, rho=new_rho, q=new_q, mixed=mixed)

    def step_tsps_imexex(self, state: SimState) -> SimState:
        self._ensure_fixed_solvers(state, StepperKind.TSPS_IMEXEX)
        dt_s = self._fixed_dt["n"]
        dt_e = self._fixed_dt["macro"]
        k_sub = self._fixed_dt["K"]
        mixed = self.solve_poisson(state)
        e_dom = self._e_by_domain(mixed)
        frozen = self.interface_traces(state)  # electrolyte traces held for all substeps
        diagnostics: dict = {"dt": dt_e, "K": k_sub, "poisson_solves": 1}
        clamped_total = 0

        rho_n, rho_p = state.rho["n"], state.rho["p"]
        q_n, q_p = state.q["n"], state.q["p"]
        for _ in range(k_sub):
            self._substep_count += 1
            rtilde, clamped = self._recomb_quad(rho_n, rho_p)
            clamped_total += clamped
            exc_n = rho_n.trace_right() - self.bc["n"]
            exc_p = rho_p.trace_right() - self.bc["p"]
            i_et = self._transfer_n(exc_n, frozen["o"])
            i_ht = self._transfer_p(exc_p, frozen["r"])
            with self.profiler.section("recom_term"):
                loads = {spn: self.ops[spn].source_load(rtilde) for spn in SEMICONDUCTOR_SPECIES}
            updates = {}
            for spn, src, lagged in (("n", i_et, rho_n), ("p", i_ht, rho_p)):
                ops = self.ops[spn]
                spec = self.specs[spn]
                with self.profiler.section("drift_term"):
                    rhs_q = ops.b_m + ops.drift_load(spec.drift_coef, e_dom["S"], lagged.coeffs)
                rhs_u = lagged.coeffs.ravel() / dt_s + (
                    ops.b_l - src * ops.sigma_w - loads[spn]
                )
                u, q = self._solve_carrier(spn, self._fixed_solvers[spn], rhs_u, rhs_q)
                updates[spn] = (
                    DGField(ops.grid, self.degree, u),
                    DGField(ops.grid, self.degree, q),
                )
            rho_n, q_n = updates["n"]
            rho_p, q_p = updates["p"]

        new_rho = {"n": rho_n, "p": rho_p}
        new_q = {"n": q_n, "p": q_p}

        if self.frozen_redox:
            for spn in ELECTROLYTE_SPECIES:
                new_rho[spn] = state.rho[spn]
                new_q[spn] = state.q[spn]
        else:
            # electrolyte step of size dt_e with the substepped semiconductor traces
            traces = {
                "n": rho_n.trace_right(),
                "p": rho_p.trace_right(),
                "r": frozen["r"],
                "o": frozen["o"],
            }
            iface = self._explicit_interface_values(traces)
            for spn in ELECTROLYTE_SPECIES:
                ops = self.ops[spn]
                spec = self.specs[spn]
                with self.profiler.section("drift_term"):
                    rhs_q = ops.b_m + ops.drift_load(
                        spec.drift_coef, e_dom["E"], state.rho[spn].coeffs
                    )
                rhs_u = state.rho[spn].coeffs.ravel() / dt_e + (
                    ops.b_l - iface[spn] * ops.sigma_w
                )
                u, q = self._solve_carrier(spn, self._fixed_solvers[spn], rhs_u, rhs_q)
                new_rho[spn] = DGField(ops.grid, self.degree, u)
                new_q[spn] = DGField(ops.grid, self.degree, q)

        diagnostics["clamped_closure_points"] = clamped_total
        self.last_diagnostics = diagnostics
        return SimState(step=state.step + 1, t=state.t + dt_e, rho=new_rho, q=new_q, mixed=mixed)


def residuals(
    old: SimState,
    new: SimState,
    dt: float,
    active: tuple[str, ...],
    rho_floor: float = 1e-8,
) -> dict[str, float]:
    """Per-unit-time relative change of each carrier field.

    The normalization carries an absolute density floor so that dynamically
    irrelevant near-zero fields (dark minority carriers creeping on the
    recombination-lifetime scale) cannot stall detection forever.
    """
    out = {}
    for spn in ("n", "p", "r", "o"):
        if spn not in active:
            out[spn] = 0.0
            continue
        diff = float(np.linalg.norm(new.rho[spn].coeffs - old.rho[spn].coeffs))
        norm = max(new.rho[spn].l2_norm(), rho_floor, EPS_GUARD)
        out[spn] = diff / (dt * norm)
    return out


def _march(
    sim: Simulation,
    kind: StepperKind,
    state: SimState,
    initial_norms: dict[str, float],
    history: list[dict] | None,
    max_steps: int,
    tol: float,
) -> tuple[SimState, bool]:
    prof = sim.profiler
    for _ in range(max_steps):
        before = dict(prof.seconds)
        old = state
        state = sim.step(kind, state)
        dt = sim.last_diagnostics["dt"]
        res = residuals(old, state, dt, sim.active_species, rho_floor=sim.rho_floor)
        for spn in sim.active_species:
            norm = state.rho[spn].l2_norm()
            if not np.isfinite(norm) or norm > sim.divergence_factor * initial_norms[spn]:
                raise DivergenceError(
                    f"field {spn} diverged at step {state.step} (norm {norm:.3e})",
                    step=state.step,
                )
        if history is not None:
            delta = {k: prof.seconds.get(k, 0.0) - before.get(k, 0.0) for k in prof.seconds}
            history.append(
                {
                    "step": state.step,
                    "t": state.t,
                    "dt": dt,
                    "residual_n": res["n"],
                    "residual_p": res["p"],
                    "residual_r": res["r"],
                    "residual_o": res["o"],
                    "negativity_fraction": sim._negativity_fraction(state),
                    "wall_ms_poisson": 1e3 * delta.get("sol_mfem", 0.0),
                    "wall_ms_ldg_fact": 1e3 * delta.get("fact_ldg", 0.0),
                    "wall_ms_ldg_solve": 1e3 * delta.get("sol_ldg", 0.0),
                    "wall_ms_drift": 1e3 * delta.get("drift_term", 0.0),
                    "wall_ms_recomb": 1e3 * delta.get("recom_term", 0.0),
                }
            )
        if max(res[spn] for spn in sim.active_species) < tol:
            return state, True
    return state, False


def _stationary_species_solve(
    sim: Simulation, state: SimState, species: str, rtilde: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray] | None:
    """Stationary solve of one carrier at the lagged field and couplings.

    This is the infinite-step limit of the implicit-drift alternating
    update: implicit diffusion and drift, implicit own-density interface
    term, everything else lagged.  Returns None if the solve fails or
    produces non-finite values.
    """
    ops = sim.ops[species]
    spec = sim.specs[species]
    traces = sim.interface_traces(state)
    exc_n = traces["n"] - sim.bc["n"]
    exc_p = traces["p"] - sim.bc["p"]
    if species == "p":
        c_int = sim._self_rate_p(traces["r"])
        source = c_int * spec.dirichlet_value
        extra = -ops.source_load(rtilde)
        elem_offset = 0
    elif species == "r":
        c_int = sim.transfer.k_ht * exc_p
        source = sim._transfer_n(exc_n, traces["o"])
        extra = 0.0
        elem_offset = sim.mesh.n_semiconductor
    elif species == "o":
        c_int = sim.transfer.k_et * exc_n
        source = sim._transfer_p(exc_p, traces["r"])
        extra = 0.0
        elem_offset = sim.mesh.n_semiconductor
    else:
        raise ValueError(species)
    drift = ops.drift_matrix(spec.drift_coef, state.mixed, elem_offset=elem_offset)
    try:
        system = ops.build_system(np.inf, interface_coeff=c_int, drift=drift)
        fact = linalg.factorize(system)
    except Exception:
        return None
    rhs_u = ops.b_l + source * ops.sigma_w + extra
    z = fact.solve(np.concatenate([rhs_u, ops.b_m]))
    if not np.isfinite(z).all():
        return None
    nloc = sim.degree + 1
    n = ops.n_dof
    return z[:n].reshape(-1, nloc), z[n:].reshape(-1, nloc)


def _minority_jump(sim: Simulation, state: SimState) -> SimState:
    """Jump slowly-relaxing carriers to their stationary balance.

    The hole field equilibrates on the carrier-lifetime and weak-transfer
    timescales and the electrolyte pair on its long diffusion time, while
    each feeds back on the potential only through sub-thermal drops, so
    stationary solves at the lagged field land on the slow modes' endpoints
    without disturbing stability.  The strongly-coupled electron/depletion
    system is left to ordinary marching, which also re-certifies the steady
    criterion afterwards.
    """
    if state.mixed is None:
        return state
    rtilde, _ = sim._recomb_quad(state.rho["n"], state.rho["p"])
    out = state.copy()
    species = ["p"] if sim.frozen_redox else ["p", "r", "o"]
    for spn in species:
        solved = _stationary_species_solve(sim, out, spn, rtilde if spn == "p" else None)
        if solved is None:
            continue
        u, q = solved
        ops = sim.ops[spn]
        if spn in ELECTROLYTE_SPECIES:
            # trust region: the electrolyte steady sits near its bulk, so a
            # large jump means the lagged field is still far off; skip it
            change = float(np.linalg.norm(u - out.rho[spn].coeffs))
            if change > 0.3 * max(out.rho[spn].l2_norm(), sim.rho_floor):
                continue
        out.rho[spn] = DGField(ops.grid, sim.degree, u)
        out.q[spn] = DGField(ops.grid, sim.degree, q.copy())
    return out


def run_to_steady(
    sim: Simulation,
    kind: StepperKind,
    state: SimState | None = None,
    record_history: bool = True,
    accelerate: bool = False,
    accel_after_steps: int = 50,
) -> RunResult:
    """March one configuration to its steady state (or the step budget).

    With `accelerate` the run splices stationary minority-carrier solves
    between marching chunks; the run still has to satisfy the ordinary
    per-unit-time steady criterion by plain marching, so the convergence
    certificate is identical either way.
    """
    state = sim.initial_state() if state is None else state
    initial_norms = {
        spn: max(state.rho[spn].l2_norm(), 1.0) for spn in sim.active_species
    }
    history: list[dict] | None = [] if record_history else None
    prof = sim.profiler
    prof.start_total()
    converged = False
    try:
        if not accelerate:
            state, converged = _march(
                sim, kind, state, initial_norms, history, sim.max_steps, sim.tol_ss
            )
        else:
            state, converged = _march(
                sim, kind, state, initial_norms, history,
                min(accel_after_steps, sim.max_steps), sim.tol_ss,
            )
            rounds = max(1, sim.max_steps // 400)
            for _round in range(rounds):
                if converged:
                    break
                state = _minority_jump(sim, state)
                state, converged = _march(
                    sim, kind, state, initial_norms, history, 400, sim.tol_ss
                )
    finally:
        prof.stop_total()
    return RunResult(
        state=state,
        history=history if history is not None else [],
        converged=converged,
        steps=state.step,
        profiler=prof,
    )


def write_history_csv(history: list[dict], path: str) -> None:
    cols = [
        "step", "t", "dt", "residual_n", "residual_p", "residual_r", "residual_o",
        "negativity_fraction", "wall_ms_poisson", "wall_ms_ldg_fact", "wall_ms_ldg_solve",
        "wall_ms_drift", "wall_ms_recomb",
    ]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in history:
            fh.write(",".join(f"{row[c]:.17g}" if c != "step" else str(row[c]) for c in cols))
            fh.write("\n")
