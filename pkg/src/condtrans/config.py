"""Experiment configuration files.

Configs are INI files with three sections::

    [experiment]
    seed = 0
    images = a.pgm, b.pgm      ; clean images (paths, relative to the file)
    noisy_images =             ; optional, aligned with (or replacing) images
    out = runs/desk

    [synthetic]
    patch_size = 8
    sparsity = 6
    iters = 300
    mu_factors = 2.1e-05, 2.1e-06, 2.1e-08, 1e-09

    [denoise]
    methods = proposed, bresler, ortho
    sigmas = 20
    patch_size = 11
    ...

Unknown keys are rejected so typos surface immediately. ``to_ini`` writes
every field, and ``from_ini(to_ini(c))`` returns an equal config.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .denoise import METHODS, SPARSITY_RULES

__all__ = ["ConfigError", "SyntheticSettings", "DenoiseSettings", "ExperimentConfig", "load_config"]

SCHEMA_VERSION = "1"


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class SyntheticSettings:
    patch_size: int = 8
    sparsity: int = 6
    iters: int = 300
    mu_factors: tuple = (2.1e-5, 2.1e-6, 2.1e-8, 1e-9)


@dataclass(frozen=True)
class DenoiseSettings:
    methods: tuple = METHODS
    sigmas: tuple = (20.0,)
    patch_size: int = 11
    stride: int = 1
    outer_iters: int = 20
    inner_iters: int = 12
    c_factor: float = 1.15
    beta_rel: float = 0.05
    mu_scale: float = 2.1e-5
    # None: measured from a bresler run on the same image
    cond_bound: float | None = None
    frob_target: float | None = None
    sparsity_search: str = "linear"
    sparsity_rule: str = "discrepancy"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    images: tuple = ()
    noisy_images: tuple = ()
    out: str = "run"
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)
    denoise: DenoiseSettings = field(default_factory=DenoiseSettings)

    def validate(self):
        s, d = self.synthetic, self.denoise
        if self.seed < 0:
            raise ConfigError("experiment.seed must be >= 0")
        if s.patch_size < 1:
            raise ConfigError("synthetic.patch_size must be >= 1")
        n = s.patch_size**2
        if not 1 <= s.sparsity <= n:
            raise ConfigError(f"synthetic.sparsity must lie in [1, {n}] for {s.patch_size}x{s.patch_size} patches, got {s.sparsity}")
        if s.iters < 1:
            raise ConfigError("synthetic.iters must be >= 1")
        if not s.mu_factors or any(not f > 0 for f in s.mu_factors):
            raise ConfigError("synthetic.mu_factors must be a non-empty list of positive numbers")
        bad = [m for m in d.methods if m not in METHODS]
        if bad or not d.methods:
            raise ConfigError(f"denoise.methods must be a non-empty subset of {', '.join(METHODS)}; got {', '.join(bad) or 'nothing'}")
        if not d.sigmas or any(x < 0 for x in d.sigmas):
            raise ConfigError("denoise.sigmas must be a non-empty list of values >= 0")
        if d.patch_size < 1:
            raise ConfigError("denoise.patch_size must be >= 1")
        if d.stride < 1:
            raise ConfigError(f"denoise.stride must be >= 1, got {d.stride}")
        if d.outer_iters < 1 or d.inner_iters < 1:
            raise ConfigError("denoise.outer_iters and denoise.inner_iters must be >= 1")
        if not (d.c_factor >= 0 and d.beta_rel > 0 and d.mu_scale > 0):
            raise ConfigError("denoise.c_factor must be >= 0; denoise.beta_rel and denoise.mu_scale must be > 0")
        if d.cond_bound is not None and not d.cond_bound >= 1:
            raise ConfigError(f"denoise.cond_bound (rho) must be >= 1, got {d.cond_bound}")
        if d.frob_target is not None and not d.frob_target > 0:
            raise ConfigError(f"denoise.frob_target (tau) must be > 0, got {d.frob_target}")
        if d.sparsity_search not in ("linear", "bisect"):
            raise ConfigError("denoise.sparsity_search must be 'linear' or 'bisect'")
        if d.sparsity_rule not in SPARSITY_RULES:
            raise ConfigError(f"denoise.sparsity_rule must be one of {', '.join(SPARSITY_RULES)}")
        if self.noisy_images and self.images and len(self.noisy_images) != len(self.images):
            raise ConfigError("experiment.noisy_images must have one entry per clean image")
        return self

    def with_overrides(self, **kw):
        return replace(self, **kw).validate()

    # -- serialization -------------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "seed": str(self.seed),
            "images": _join(self.images),
            "noisy_images": _join(self.noisy_images),
            "out": self.out,
        }
        cp["synthetic"] = {f.name: _fmt(getattr(self.synthetic, f.name)) for f in fields(SyntheticSettings)}
        cp["denoise"] = {f.name: _fmt(getattr(self.denoise, f.name)) for f in fields(DenoiseSettings)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text, base_dir=None):
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        unknown = set(cp.sections()) - {"experiment", "synthetic", "denoise"}
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

        ex = dict(cp["experiment"]) if cp.has_section("experiment") else {}
        _reject_unknown("experiment", ex, {"seed", "images", "noisy_images", "out"})
        kw = {}
        if "seed" in ex:
            kw["seed"] = _parse(int, "experiment.seed", ex["seed"])
        for key in ("images", "noisy_images"):
            if key in ex:
                kw[key] = tuple(_resolve(p, base_dir) for p in _split(ex[key]))
        if "out" in ex:
            kw["out"] = ex["out"]
        kw["synthetic"] = _section(cp, "synthetic", SyntheticSettings)
        kw["denoise"] = _section(cp, "denoise", DenoiseSettings)
        return cls(**kw).validate()

    def sha256(self):
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return ExperimentConfig.from_ini(text, base_dir=path.parent)


# -- helpers -----------------------------------------------------------------

_TYPES = {
    "patch_size": int, "sparsity": int, "iters": int, "stride": int,
    "outer_iters": int, "inner_iters": int,
    "c_factor": float, "beta_rel": float, "mu_scale": float,
    "cond_bound": float, "frob_target": float,
    "sparsity_search": str, "sparsity_rule": str,
    "mu_factors": (float,), "sigmas": (float,), "methods": (str,),
}


def _section(cp, name, cls):
    raw = dict(cp[name]) if cp.has_section(name) else {}
    names = {f.name for f in fields(cls)}
    _reject_unknown(name, raw, names)
    kw = {}
    for key, text in raw.items():
        typ = _TYPES[key]
        if isinstance(typ, tuple):
            kw[key] = tuple(_parse(typ[0], f"{name}.{key}", t) for t in _split(text))
        elif key in ("cond_bound", "frob_target") and text.strip().lower() in ("", "auto", "none"):
            kw[key] = None
        else:
            kw[key] = _parse(typ, f"{name}.{key}", text.strip())
    return cls(**kw)


def _reject_unknown(section, raw, allowed):
    extra = set(raw) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")


def _parse(typ, key, text):
    try:
        v = typ(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None
    if typ is float and not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return v


def _split(text):
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _join(items):
    return ", ".join(str(i) for i in items)


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return _join(_fmt(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _resolve(p, base_dir):
    path = Path(p)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return str(path)
