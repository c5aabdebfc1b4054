"""Experiment runner: convergence, localization, decay and identity studies."""

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .coefficient import make_coefficient
from .correctors import (build_basis, compute_correctors, compute_remainder, decay_profile,
                         fit_decay_rate)
from .decomposition import apply_P0, build_projection_kit
from .fem import assemble_load, assemble_stiffness, energy_norm
from .mesh import build_two_level
from .solver import error_report, solve_multiscale, solve_reference

__all__ = ['ConfigError', 'CoefficientSpec', 'KPolicy', 'ExperimentConfig', 'ReportRow',
           'ExperimentReport', 'run_study', 'run_convergence', 'run_localization',
           'run_decay', 'run_identities', 'fit_rate', 'CSV_HEADER', 'STUDIES']

CSV_HEADER = ['study', 'd', 'n', 'r', 'k', 'coeff', 'eps', 'contrast', 'seed', 'energy_err',
              'l2_err', 'remainder_norm', 'rate', 'decay_c', 'wall_ms']
STUDIES = ('convergence', 'localization', 'decay', 'identities')

DEFAULT_TOLERANCES = {
    'identity': 1e-8,
    'feasibility': 1e-10,
    'saturation': 1e-10,
    'negative_control': 1e-3,
    'min_rate': None,
    'min_decay_c': None,
    'max_localization_ratio': None,
    'max_eps_ratio': None,
}

SOURCES = {
    'one': lambda x: np.ones(x.shape[0]),
    'sine': lambda x: np.prod(np.sin(np.pi * x), axis=1),
}


class ConfigError(ValueError):
    pass


@dataclass
class CoefficientSpec:
    kind: str = 'checkerboard'
    eps: float | None = 0.125
    contrast: float = 100.0
    value: float = 1.0
    seed: int = 42

    def build(self, mesh, eps=None):
        eps = self.eps if eps is None else eps
        if self.kind == 'constant':
            return make_coefficient(mesh, 'constant', seed=self.seed, value=self.value)
        if self.kind == 'periodic':
            return make_coefficient(mesh, 'periodic', seed=self.seed, eps=eps)
        return make_coefficient(mesh, self.kind, seed=self.seed, eps=eps, contrast=self.contrast)


@dataclass
class KPolicy:
    kind: str = 'log'        # fixed | log | saturated | global
    k: int | None = None
    offset: int = 1

    def level(self, mesh):
        """Patch level for this mesh; None means unlocalized correctors."""
        if self.kind == 'global':
            return None
        if self.kind == 'saturated':
            return mesh.saturation_level()
        if self.kind == 'fixed':
            return int(self.k)
        return int(math.ceil(math.log2(mesh.n))) + self.offset


@dataclass
class ExperimentConfig:
    study: str = 'convergence'
    d: int = 2
    n_values: list = field(default_factory=lambda: [4, 8, 16])
    r: int = 2
    coefficient: CoefficientSpec = field(default_factory=CoefficientSpec)
    eps_values: list | None = None
    k_policy: KPolicy = field(default_factory=KPolicy)
    f: str = 'one'
    sample_nodes: int = 5
    negative_control: bool = False
    threads: int = 1
    tolerances: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            coeff = CoefficientSpec(**data.pop('coefficient', {}))
            kpol = KPolicy(**data.pop('k_policy', {}))
            cfg = cls(coefficient=coeff, k_policy=kpol, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError('cannot read config %s: %s' % (path, exc)) from exc
        return cls.from_dict(data)

    def tol(self, name):
        return {**DEFAULT_TOLERANCES, **self.tolerances}[name]

    def validate(self):
        if self.study not in STUDIES:
            raise ConfigError('unknown study %r' % (self.study,))
        if self.d not in (1, 2):
            raise ConfigError('d must be 1 or 2')
        if not self.n_values or any(int(n) != n or n < 2 for n in self.n_values):
            raise ConfigError('n_values must be integers >= 2')
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError('r must be an integer >= 1')
        c = self.coefficient
        if c.kind not in ('constant', 'periodic', 'checkerboard'):
            raise ConfigError('unknown coefficient kind %r' % (c.kind,))
        if c.kind != 'constant':
            for eps in self.eps_values or [c.eps]:
                if eps is None or eps <= 0:
                    raise ConfigError('%s coefficient needs eps > 0' % c.kind)
        if c.kind == 'checkerboard' and c.contrast < 1:
            raise ConfigError('contrast must be >= 1')
        if c.kind == 'constant' and c.value <= 0:
            raise ConfigError('constant coefficient must be positive')
        if self.k_policy.kind not in ('fixed', 'log', 'saturated', 'global'):
            raise ConfigError('unknown k policy %r' % (self.k_policy.kind,))
        if self.k_policy.kind == 'fixed' and (self.k_policy.k is None or self.k_policy.k < 1):
            raise ConfigError('fixed k policy needs k >= 1')
        if self.f not in SOURCES:
            raise ConfigError('f must be one of %s' % ', '.join(SOURCES))
        if self.sample_nodes < 1:
            raise ConfigError('sample_nodes must be >= 1')
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError('unknown tolerance keys: %s' % ', '.join(sorted(unknown)))
        if self.threads < 1:
            raise ConfigError('threads must be >= 1')


@dataclass
class ReportRow:
    study: str
    d: int
    n: int
    r: int
    k: object
    coeff: str
    eps: float | None
    contrast: float | None
    seed: int
    energy_err: float | None = None
    l2_err: float | None = None
    remainder_norm: float | None = None
    rate: float | None = None
    decay_c: float | None = None
    wall_ms: float | None = None
    extras: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float


@dataclass
class ExperimentReport:
    study: str
    rows: list
    checks: list
    metadata: dict

    @property
    def ok(self):
        return all(c.passed for c in self.checks) and not any(r.error for r in self.rows)

    def to_csv(self, timing=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(CSV_HEADER)
        for row in self.rows:
            values = asdict(row)
            if not timing:
                values['wall_ms'] = None
            w.writerow([_fmt(values[c]) for c in CSV_HEADER])
        return buf.getvalue()

    def to_json(self, timing=False):
        rows = []
        for row in self.rows:
            values = asdict(row)
            if not timing:
                values.pop('wall_ms')
            rows.append(values)
        meta = dict(self.metadata)
        if not timing:
            meta.pop('wall_ms', None)
        doc = {'study': self.study, 'ok': self.ok, 'metadata': meta,
               'checks': [asdict(c) for c in self.checks], 'rows': rows}
        return json.dumps(_jsonable(doc), indent=1, sort_keys=True) + '\n'


def _fmt(v):
    if v is None:
        return ''
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def fit_rate(hs, errs):
    """Least-squares slope of log(err) against log(h); None with fewer than 3 points."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = errs > 0
    if keep.sum() < 3:
        return None
    return float(np.polyfit(np.log(hs[keep]), np.log(errs[keep]), 1)[0])


class _Problem:
    """Everything assembled for one (d, n, r, coefficient) combination."""

    def __init__(self, cfg, n, eps=None):
        self.mesh = build_two_level(cfg.d, n, cfg.r)
        self.coeff = cfg.coefficient.build(self.mesh, eps)
        self.A = assemble_stiffness(self.mesh, self.coeff)
        self.b = assemble_load(self.mesh, SOURCES[cfg.f])
        self.kit = build_projection_kit(self.mesh)
        self.threads = cfg.threads
        self._ref = None

    @property
    def reference(self):
        if self._ref is None:
            self._ref = solve_reference(self.A, self.b)
        return self._ref

    def correctors(self, k, nodes=None):
        return compute_correctors(self.mesh, self.kit, self.A, k, nodes, threads=self.threads)

    def multiscale(self, k):
        correctors = self.correctors(k)
        basis = build_basis(correctors, self.kit.P)
        return correctors, basis, solve_multiscale(basis, self.A, self.b)


def _row(cfg, n, k, coeff, eps=None):
    c = cfg.coefficient
    return ReportRow(
        study=cfg.study, d=cfg.d, n=n, r=cfg.r, k='global' if k is None else k,
        coeff=c.kind, eps=None if c.kind == 'constant' else (c.eps if eps is None else eps),
        contrast=c.contrast if c.kind == 'checkerboard' else None,
        seed=c.seed, extras={'f': cfg.f, 'under_resolved': bool(coeff is not None and coeff.under_resolved)})


def _sample_nodes(mesh, count):
    """Evenly spread interior coarse nodes, deterministic."""
    count = min(count, mesh.n_coarse_dofs)
    idx = np.unique(np.linspace(0, mesh.n_coarse_dofs - 1, count).round().astype(int))
    return mesh.coarse_dof_nodes[idx]


def _guard(row, fn):
    t0 = time.perf_counter()
    try:
        fn(row)
    except Exception as exc:  # a failing row is recorded, the sweep goes on
        row.error = '%s: %s' % (type(exc).__name__, exc)
    row.wall_ms = 1e3 * (time.perf_counter() - t0)
    return row


def run_convergence(cfg):
    rows, checks = [], []
    eps_list = cfg.eps_values or [cfg.coefficient.eps]
    for eps in eps_list:
        group = []
        for n in cfg.n_values:
            def body(row, n=n, eps=eps):
                prob = _Problem(cfg, n, eps)
                k = cfg.k_policy.level(prob.mesh)
                row.k = 'global' if k is None else k
                row.extras['under_resolved'] = bool(prob.coeff.under_resolved)
                _, _, ms = prob.multiscale(k)
                u = prob.reference.u
                err = error_report(u, ms.u, prob.A, prob.kit.M_fine)
                coarse = solve_multiscale(prob.kit.P, prob.A, prob.b)
                cerr = error_report(u, coarse.u, prob.A, prob.kit.M_fine)
                rf = compute_remainder(prob.mesh, prob.kit, prob.A, prob.b)
                row.energy_err, row.l2_err = err.energy, err.l2
                row.remainder_norm = energy_norm(prob.A, rf)
                row.extras.update(rel_energy_err=err.rel_energy, coarse_energy_err=cerr.energy,
                                  coarse_l2_err=cerr.l2)
            group.append(_guard(_row(cfg, n, None, None, eps), body))
        good = [r for r in group if r.error is None]
        rate = fit_rate([1.0 / r.n for r in good], [r.energy_err for r in good])
        for r in group:
            r.rate = rate
        if cfg.tol('min_rate') is not None:
            checks.append(Check('rate(eps=%s)' % _fmt(eps), rate is not None and rate >= cfg.tol('min_rate'),
                                float('nan') if rate is None else rate, cfg.tol('min_rate')))
        rows.extend(group)
    if cfg.tol('max_eps_ratio') is not None and len(eps_list) > 1:
        for n in cfg.n_values:
            errs = [r.energy_err for r in rows if r.n == n and r.error is None]
            if len(errs) == len(eps_list):
                ratio = max(errs) / min(errs)
                checks.append(Check('eps_ratio(n=%d)' % n, ratio <= cfg.tol('max_eps_ratio'),
                                    ratio, cfg.tol('max_eps_ratio')))
    return rows, checks


def run_localization(cfg):
    rows, checks = [], []
    n = cfg.n_values[0]
    prob = _Problem(cfg, n)
    u = prob.reference.u
    nodes = _sample_nodes(prob.mesh, cfg.sample_nodes)
    global_corr, _, global_ms = prob.multiscale(None)
    global_err = error_report(u, global_ms.u, prob.A, prob.kit.M_fine)
    by_node = {c.z: c for c in global_corr}
    rf_norm = energy_norm(prob.A, compute_remainder(prob.mesh, prob.kit, prob.A, prob.b))

    grow = _row(cfg, n, None, prob.coeff)
    grow.energy_err, grow.l2_err, grow.remainder_norm = global_err.energy, global_err.l2, rf_norm
    rows.append(grow)

    saturation = prob.mesh.saturation_level()
    for k in range(1, saturation + 1):
        def body(row, k=k):
            corr, _, ms = prob.multiscale(k)
            err = error_report(u, ms.u, prob.A, prob.kit.M_fine)
            row.energy_err, row.l2_err, row.remainder_norm = err.energy, err.l2, rf_norm
            diffs = {int(c.z): energy_norm(prob.A, c.phi - by_node[c.z].phi) for c in corr if c.z in set(nodes.tolist())}
            row.extras.update(corrector_diff=diffs, max_corrector_diff=max(diffs.values()),
                              ratio_to_global=err.energy / global_err.energy if global_err.energy > 0 else float('nan'))
        rows.append(_guard(_row(cfg, n, k, prob.coeff), body))

    sat_row = rows[-1]
    if sat_row.error is None:
        diff = abs(sat_row.energy_err - global_err.energy)
        checks.append(Check('saturated_equals_global', diff <= cfg.tol('saturation') * max(global_err.energy, 1e-300) + 1e-300,
                            diff, cfg.tol('saturation')))
    if cfg.tol('max_localization_ratio') is not None:
        k_star = cfg.k_policy.level(prob.mesh)
        k_star = saturation if k_star is None else min(k_star, saturation)
        match = [r for r in rows if r.k == k_star and r.error is None]
        if match:
            ratio = match[0].extras['ratio_to_global']
            checks.append(Check('localization_ratio(k=%d)' % k_star,
                                ratio <= cfg.tol('max_localization_ratio'), ratio,
                                cfg.tol('max_localization_ratio')))
    return rows, checks


def run_decay(cfg):
    rows, checks = [], []
    for n in cfg.n_values:
        prob = _Problem(cfg, n)
        nodes = _sample_nodes(prob.mesh, cfg.sample_nodes)
        for c in prob.correctors(None, nodes):
            def body(row, c=c):
                profile = decay_profile(c, prob.mesh, prob.coeff)
                tails = np.array([t for _, t in profile])
                row.decay_c = fit_decay_rate(profile)
                row.energy_err = None
                row.extras.update(node=int(c.z), node_coords=prob.mesh.coarse_coords[c.z].tolist(),
                                  corrector_norm=c.energy_norm, profile=[[l, t] for l, t in profile])
                monotone = bool(np.all(np.diff(tails) <= 0))
                checks.append(Check('monotone(z=%d,n=%d)' % (c.z, n), monotone,
                                    float(np.max(np.diff(tails), initial=0.0)), 0.0))
                checks.append(Check('zero_at_saturation(z=%d,n=%d)' % (c.z, n), tails[-1] == 0.0,
                                    float(tails[-1]), 0.0))
                if cfg.tol('min_decay_c') is not None:
                    checks.append(Check('decay_c(z=%d,n=%d)' % (c.z, n),
                                        row.decay_c >= cfg.tol('min_decay_c'), row.decay_c,
                                        cfg.tol('min_decay_c')))
            row = _row(cfg, n, None, prob.coeff)
            row.k = prob.mesh.saturation_level(c.z)
            rows.append(_guard(row, body))
    return rows, checks


def identity_residuals(prob, k=None, n_random=20, seed=0):
    """Residuals of the exact error and projection identities and of the corrector constraints."""
    correctors, basis, ms = prob.multiscale(k)
    u = prob.reference.u
    rf = compute_remainder(prob.mesh, prob.kit, prob.A, prob.b)
    unorm = energy_norm(prob.A, u)
    error_identity = energy_norm(prob.A, u - ms.u - rf) / unorm if unorm > 0 else energy_norm(prob.A, u - ms.u - rf)
    projection_identity = float(np.abs(apply_P0(prob.kit, u) - ms.coarse).max(initial=0.0))

    rng = np.random.default_rng(seed)
    B = basis.B.toarray()
    AB = prob.A @ B
    col_norms = np.sqrt(np.maximum(np.einsum('ij,ij->j', B, AB), 0.0))
    orth = 0.0
    for _ in range(n_random):
        v = rng.standard_normal(prob.mesh.n_fine_dofs)
        w = v - prob.kit.P @ apply_P0(prob.kit, v)
        wn = energy_norm(prob.A, w)
        orth = max(orth, float(np.max(np.abs(w @ AB) / (col_norms * wn))))
    feas = max(c.feasibility for c in correctors)
    feas_rel = max(c.feasibility / (1.0 + c.energy_norm) for c in correctors)
    return {'error_identity': float(error_identity), 'projection_identity': projection_identity, 'orthogonality': orth,
            'feasibility': float(feas), 'feasibility_rel': float(feas_rel),
            'energy_err': energy_norm(prob.A, u - ms.u), 'remainder_norm': energy_norm(prob.A, rf)}


def run_identities(cfg):
    rows, checks = [], []
    tol, ftol = cfg.tol('identity'), cfg.tol('feasibility')
    for n in cfg.n_values:
        prob = _Problem(cfg, n)

        def body(row, prob=prob, n=n):
            res = identity_residuals(prob, None, seed=cfg.coefficient.seed)
            row.energy_err, row.remainder_norm = res['energy_err'], res['remainder_norm']
            row.extras.update(residuals=res)
            for name in ('error_identity', 'projection_identity', 'orthogonality'):
                checks.append(Check('%s(n=%d)' % (name, n), res[name] <= tol, res[name], tol))
            checks.append(Check('feasibility(n=%d)' % n, res['feasibility'] <= ftol, res['feasibility'], ftol))
        rows.append(_guard(_row(cfg, n, None, prob.coeff), body))

        if cfg.negative_control:
            def neg(row, prob=prob, n=n):
                res = identity_residuals(prob, 1, seed=cfg.coefficient.seed)
                row.energy_err, row.remainder_norm = res['energy_err'], res['remainder_norm']
                row.extras.update(residuals=res, negative_control=True)
                thr = cfg.tol('negative_control')
                checks.append(Check('negative_control_error_identity(n=%d,k=1)' % n,
                                    res['error_identity'] > thr, res['error_identity'], thr))
            rows.append(_guard(_row(cfg, n, 1, prob.coeff), neg))
    return rows, checks


RUNNERS = {'convergence': run_convergence, 'localization': run_localization,
           'decay': run_decay, 'identities': run_identities}


def run_study(cfg):
    cfg.validate()
    t0 = time.perf_counter()
    rows, checks = RUNNERS[cfg.study](cfg)
    for r in rows:
        if r.error:
            checks.append(Check('row_error(n=%d,k=%s)' % (r.n, r.k), False, float('nan'), 0.0))
    meta = {'config': _jsonable(asdict(cfg)), 'version': __version__,
            'numpy': np.__version__, 'wall_ms': 1e3 * (time.perf_counter() - t0)}
    return ExperimentReport(cfg.study, rows, checks, meta)
