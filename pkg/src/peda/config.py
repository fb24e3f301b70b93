"""Line-based run configuration: "key = value" entries under [section]
headers, '#' comments, defaults for omitted keys, unknown keys rejected
with the offending line number. The resolved configuration is re-emitted
in canonical form for the run log; re-parsing that text reproduces the
same RunConfig (and its hash names the run directory)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .dynamics import Forcing, ModelConfig, PhysParams
from .grid import Grid, NormParams, recommended_K
from .twin import TwinConfig


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _fraction(v):
    return 0.0 <= v <= 1.0


_VERIFY_CHECKS = ("all", "wbound", "energy", "nlbound", "picard")

# (section, key, type, default, validator, constraint description)
_SCHEMA = [
    ("grid", "nx", int, 32, lambda v: v >= 4, "must be >= 4"),
    ("grid", "ny", int, 32, lambda v: v >= 4, "must be >= 4"),
    ("grid", "nz", int, 9, lambda v: v >= 3, "must be >= 3"),
    ("grid", "a", float, 1.0, _positive, "must be positive"),
    ("phys", "alpha", float, 1.0, _nonneg, "must be nonnegative"),
    ("phys", "beta", float, 0.5, _nonneg, "must be nonnegative"),
    ("phys", "gamma", float, 0.5, _nonneg, "must be nonnegative"),
    ("phys", "nu", float, 0.02, _positive, "must be positive"),
    ("model", "dt", float, 0.05, _positive, "must be positive"),
    ("model", "linear", bool, False, None, ""),
    ("model", "forcing", str, "wind", lambda v: v in ("none", "wind"),
     "must be none or wind"),
    ("model", "tau0", float, 0.5, _nonneg, "must be nonnegative"),
    ("norms", "m", int, 2, lambda v: v >= 2, "must be >= 2"),
    ("norms", "K", float, 0.0, _nonneg,
     "must be nonnegative (0 resolves to the recommended value)"),
    ("floats", "count", int, 50, lambda v: v >= 1, "must be >= 1"),
    ("floats", "z0", float, 0.5, _positive, "must be positive"),
    ("floats", "obs_count", int, 10, lambda v: v >= 1, "must be >= 1"),
    ("floats", "noise_sd", float, 1e-3, _nonneg, "must be nonnegative"),
    ("assim", "omega", float, 1.0, _nonneg, "must be nonnegative"),
    ("assim", "sigma_u", float, 0.3, _positive, "must be positive"),
    ("assim", "sigma_v", float, 0.3, _positive, "must be positive"),
    ("assim", "sigma_theta", float, 0.3, _positive, "must be positive"),
    ("assim", "sigma_mode", str, "level", lambda v: v in ("level", "const"),
     "must be level or const"),
    ("assim", "sigma_scale", float, 1.0, _positive, "must be positive"),
    ("assim", "sigma_floor", float, 0.02, _positive, "must be positive"),
    ("assim", "freeze_theta", bool, True, None, ""),
    ("assim", "outer", int, 3, lambda v: v >= 1, "must be >= 1"),
    ("assim", "inner", int, 10, lambda v: v >= 1, "must be >= 1"),
    ("assim", "cg_tol", float, 1e-3, _positive, "must be positive"),
    ("assim", "background_norm", str, "b", lambda v: v in ("b", "u"),
     "must be b or u"),
    ("twin", "spinup_steps", int, 1500, _nonneg, "must be nonnegative"),
    ("twin", "spinup_perturbation", float, 0.0, _nonneg, "must be nonnegative"),
    ("twin", "window_steps", int, 200, lambda v: v >= 1, "must be >= 1"),
    ("twin", "s_b", float, 0.0, _fraction, "must be in [0, 1]"),
    ("twin", "windows", int, 1, lambda v: v >= 1, "must be >= 1"),
    ("run", "seed", int, 1234, _nonneg, "must be nonnegative"),
    ("run", "record_every", int, 10, lambda v: v >= 1, "must be >= 1"),
    ("run", "plots", bool, True, None, ""),
    ("run", "threads", int, 1, lambda v: v >= 1, "must be >= 1"),
    ("verify", "check", str, "all", lambda v: v in _VERIFY_CHECKS,
     f"must be one of {', '.join(_VERIFY_CHECKS)}"),
    ("verify", "samples", int, 10, lambda v: v >= 1, "must be >= 1"),
    ("verify", "t_final", float, 0.5, _positive, "must be positive"),
    ("verify", "amplitude", float, 0.2, _positive, "must be positive"),
    ("verify", "picard_t", float, 0.2, _positive, "must be positive"),
    ("verify", "picard_max_n", int, 20, lambda v: v >= 1, "must be >= 1"),
    ("verify", "picard_tol", float, 1e-10, _positive, "must be positive"),
    ("verify", "wbound_nz", int, 17, lambda v: v >= 3, "must be >= 3"),
    ("gradcheck", "directions", int, 10, lambda v: v >= 1, "must be >= 1"),
    ("gradcheck", "fd_eps", float, 1e-5, _positive, "must be positive"),
    ("paths", "truth_dir", str, "", None, ""),
    ("paths", "ref_dir", str, "", None, ""),
    ("paths", "run_dir", str, "", None, ""),
    ("paths", "obs_file", str, "", None, ""),
    ("paths", "background_dir", str, "", None, ""),
]

_BY_KEY = {(s, k): (typ, default, val, msg) for s, k, typ, default, val, msg in _SCHEMA}


def _parse_bool(raw: str):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class RunConfig:
    """Fully resolved configuration; one attribute per schema key, named
    section_key."""

    # populated programmatically below; listing fields keeps dataclass
    # equality and repr
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    # ---- factories -------------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self.grid_nx, self.grid_ny, self.grid_nz, self.grid_a)

    def phys(self) -> PhysParams:
        return PhysParams(self.phys_alpha, self.phys_beta, self.phys_gamma,
                          self.phys_nu)

    def norm_params(self) -> NormParams:
        K = self.norms_K
        if K == 0.0:
            K = recommended_K(self.grid_a, self.phys_nu, self.phys_gamma,
                              self.phys_beta)
        return NormParams(self.norms_m, K)

    def model_config(self) -> ModelConfig:
        g = self.grid()
        if self.model_forcing == "wind":
            forcing = Forcing.wind(g, self.model_tau0)
        else:
            forcing = Forcing.none()
        return ModelConfig(g, self.phys(), dt=self.model_dt,
                           linear=self.model_linear, forcing=forcing)

    def twin_config(self) -> TwinConfig:
        return TwinConfig(
            nx=self.grid_nx, ny=self.grid_ny, nz=self.grid_nz, a=self.grid_a,
            phys=self.phys(), dt=self.model_dt, tau0=self.model_tau0,
            spinup_steps=self.twin_spinup_steps,
            spinup_perturbation=self.twin_spinup_perturbation,
            window_steps=self.twin_window_steps,
            floats=self.floats_count, obs_count=self.floats_obs_count,
            noise_sd=self.floats_noise_sd, z0=self.floats_z0,
            s_b=self.twin_s_b, omega=self.assim_omega,
            sigma_u=self.assim_sigma_u, sigma_v=self.assim_sigma_v,
            sigma_theta=self.assim_sigma_theta,
            sigma_mode=self.assim_sigma_mode,
            sigma_scale=self.assim_sigma_scale,
            sigma_floor=self.assim_sigma_floor,
            background_norm=self.assim_background_norm,
            freeze_theta=self.assim_freeze_theta,
            outer_loops=self.assim_outer, inner_iters=self.assim_inner,
            cg_tol=self.assim_cg_tol, seed=self.run_seed,
            windows=self.twin_windows)


def parse_config(text: str) -> RunConfig:
    """Parse "key = value" lines into a fully resolved RunConfig."""
    values = {f"{s}_{k}": default for s, k, _, default, _, _ in _SCHEMA}
    seen_sections = {s for s, *_ in _SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in seen_sections:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rawval = line.partition("=")
        key = key.strip()
        rawval = rawval.strip()
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} before any [section]")
        spec = _BY_KEY.get((section, key))
        if spec is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        typ, _, validator, msg = spec
        try:
            if typ is bool:
                val = _parse_bool(rawval)
            else:
                val = typ(rawval)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: key {key!r} expects {typ.__name__}, "
                f"got {rawval!r}") from None
        if validator is not None and not validator(val):
            raise ConfigError(f"line {lineno}: key {key!r} {msg}, got {rawval}")
        values[f"{section}_{key}"] = val

    rc = RunConfig(values)
    _cross_validate(rc)
    return rc


def _cross_validate(rc: RunConfig) -> None:
    if rc.floats_z0 >= rc.grid_a:
        raise ConfigError(f"key 'z0' must lie strictly inside (0, a="
                          f"{rc.grid_a}), got {rc.floats_z0}")
    if rc.floats_obs_count > rc.twin_window_steps:
        raise ConfigError("key 'obs_count' exceeds the window length "
                          f"({rc.floats_obs_count} > {rc.twin_window_steps})")


def emit_config(rc: RunConfig) -> str:
    """Canonical text of the resolved configuration (schema order)."""
    lines = []
    current = None
    for s, k, typ, _, _, _ in _SCHEMA:
        if s != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{s}]")
            current = s
        v = rc.values[f"{s}_{k}"]
        if typ is bool:
            sval = "true" if v else "false"
        elif typ is float:
            sval = repr(float(v))
        else:
            sval = str(v)
        lines.append(f"{k} = {sval}")
    return "\n".join(lines) + "\n"


def config_hash(rc: RunConfig) -> str:
    return hashlib.sha256(emit_config(rc).encode()).hexdigest()[:12]


def default_config() -> RunConfig:
    return parse_config("")
