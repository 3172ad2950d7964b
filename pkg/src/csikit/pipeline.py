"""Config-driven step pipelines with run manifests.

A pipeline is an ordered list of steps sharing one context: the current CSI
tensor plus whatever earlier steps left behind (reported AGC gains, an RCO
estimate, a blur matrix, synthetic spectra). Feature steps always write CSV;
tensor steps write their tensor only when asked to (``"save"``), in the
configured ``format``.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bvp, features, sanitize, sim, specgen
from .core import ChannelConfig, as_tensor
from .errors import ConfigError, DataError
from .io import (atomic_write_bytes, encode_dataset, file_sha256, read_csi1,
                 read_matrix_csv, write_csi1, write_csv, write_matrix_csv)
from .spectral import WindowSpec

FORMATS = ("csv", "csi1")


@dataclass
class Step:
    name: str
    params: dict = field(default_factory=dict)
    save: str | None = None


@dataclass
class PipelineConfig:
    steps: list = field(default_factory=list)
    out: str = "out"
    seed: int = 0
    input: str | None = None
    channel: dict | None = None
    format: str = "csi1"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("pipeline config must be a JSON object")
        unknown = set(d) - {"steps", "out", "seed", "input", "channel", "format"}
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        steps = []
        for i, s in enumerate(d.get("steps", [])):
            if isinstance(s, str):
                s = {"step": s}
            if not isinstance(s, dict) or "step" not in s:
                raise ConfigError(f"step {i} needs a 'step' name")
            extra = set(s) - {"step", "params", "save"}
            if extra:
                raise ConfigError(f"step {i}: unknown keys {sorted(extra)}")
            params = s.get("params", {})
            if not isinstance(params, dict):
                raise ConfigError(f"step {i}: params must be an object")
            steps.append(Step(s["step"], dict(params), s.get("save")))
        return cls(steps=steps, out=d.get("out", "out"), seed=d.get("seed", 0),
                   input=d.get("input"), channel=d.get("channel"),
                   format=d.get("format", "csi1"))

    def to_dict(self):
        return {
            "steps": [{"step": s.name, "params": s.params, "save": s.save} for s in self.steps],
            "seed": self.seed, "input": self.input, "channel": self.channel,
            "format": self.format,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    config_hash: str
    seed: int
    input_hashes: dict
    steps: list  # [{"step", "wall_time_s", "outputs"}]

    def to_dict(self):
        return {"tool_version": self.tool_version, "config_hash": self.config_hash,
                "seed": self.seed, "input_hashes": self.input_hashes, "steps": self.steps}


class _Context:
    def __init__(self, cfg: PipelineConfig, out: Path, channel: ChannelConfig):
        self.cfg = cfg
        self.out = out
        self.channel = channel
        self.csi = None
        self.written = []
        self.state = {}
        self.seed = 0

    def need_csi(self, step):
        if self.csi is None:
            raise DataError(f"step {step!r} needs a CSI tensor; add 'simulate' or an input")
        return self.csi

    def path(self, name):
        p = self.out / name
        self.written.append(p)
        return p

    def save_tensor(self, step, save):
        if not save:
            return
        ext = self.cfg.format
        name = save if isinstance(save, str) else f"{step}.{ext}"
        if self.cfg.format == "csi1":
            write_csi1(self.path(name), self.csi)
        else:
            write_tensor_csv(self.path(name), self.csi)


def write_tensor_csv(path, csi):
    """Long-format tensor CSV: ``t,s,a,l,re,im``."""
    H = as_tensor(csi)
    idx = np.indices(H.shape).reshape(4, -1).T
    flat = H.ravel()
    rows = np.column_stack([idx, flat.real, flat.imag])
    write_csv(path, rows, header=["t", "s", "a", "l", "re", "im"])


def _complex_long_rows(arrays):
    """Rows ``sample, bin, re, im, ...`` for equally shaped (N, F) complex arrays."""
    N, F = arrays[0].shape
    n, b = np.divmod(np.arange(N * F), F)
    cols = [n, b]
    for a in arrays:
        cols += [a.real.ravel(), a.imag.ravel()]
    return np.column_stack(cols)


# ---------------------------------------------------------------- steps

def _load(ctx, path):
    ctx.csi = as_tensor(read_csi1(path))


def _simulate(ctx, model="ray_tracing", n_packets=100, n_ltf=1, multipath=None, scene=None,
              snr_db=None):
    cfg = ctx.channel
    if model == "ray_tracing":
        if multipath is None:
            multipath = {"paths": [{"distance": 10.0}]}
        mc = sim.MultipathChannel.from_dict({"speed_of_light": cfg.speed_of_light, **multipath})
        H = sim.synth_ray_tracing(mc, cfg, int(n_packets), int(n_ltf))
    elif model == "scattering":
        scene = sim.ScatterScene.from_dict(scene or {})
        H, truth = sim.synth_scattering(scene, cfg, int(n_packets), ctx.seed)
        write_csv(ctx.path("speed_truth.csv"), [[truth.v]], header=["v_mps"])
    else:
        raise ConfigError(f"unknown simulation model {model!r}")
    if snr_db is not None:
        H = sim.add_awgn(H, float(snr_db), seed=ctx.seed + 1)
    ctx.csi = H


def _inject(ctx, snr_db=None, **errors):
    H = ctx.need_csi("inject")
    em = sim.ErrorModel.from_dict(errors, n_subcarriers=H.shape[1])
    if em.agc_gains is not None:
        ctx.state["agc_gains"] = em.agc_gains
    out = sim.inject_errors(H, em, ctx.channel, seed=ctx.seed)
    if snr_db is not None:
        out = sim.add_awgn(out, float(snr_db), seed=ctx.seed + 1)
    ctx.csi = out


def _sanitize(ctx, ops=("sto_div",), calib=None, agc_gains=None, linear_interval=None):
    H = ctx.need_csi("sanitize")
    interval = sanitize.DEFAULT_LINEAR_INTERVAL if linear_interval is None else range(*linear_interval)
    calib_csi = as_tensor(read_csi1(calib)) if calib else None
    for op in ops:
        if op == "nonlinear":
            if calib_csi is None:
                raise ConfigError("'nonlinear' needs a 'calib' capture")
            H = sanitize.nonlinear_calib(H, sanitize.set_template(calib_csi, interval))
        elif op == "agc":
            gains = agc_gains if agc_gains is not None else ctx.state.get("agc_gains")
            if gains is None:
                raise ConfigError("'agc' needs agc_gains (or an earlier inject step reporting them)")
            H = sanitize.agc_calib(H, gains)
        elif op == "rco":
            if calib_csi is None:
                raise ConfigError("'rco' needs a 'calib' capture")
            ctx.state["rco"] = est = sanitize.rco_calib(calib_csi)
            write_csv(ctx.path("rco.csv"), [[k, v] for k, v in enumerate(est)],
                      header=["antenna", "rco_rad"])
        elif op == "cfo":
            est = sanitize.cfo_calib(H)
            write_csv(ctx.path("cfo.csv"), [[i, v] for i, v in enumerate(est)],
                      header=["packet", "cfo_hz"])
        elif op == "sto_div":
            H = sanitize.sto_calib_div(H)
        elif op == "sto_mul":
            H = sanitize.sto_calib_mul(H)
        else:
            raise ConfigError(f"unknown sanitize op {op!r}")
    ctx.csi = H


def _tof(ctx):
    tof = features.naive_tof(ctx.need_csi("tof"), ctx.channel)
    dist = tof.mean(axis=1) * ctx.channel.speed_of_light
    rows = np.column_stack([np.arange(tof.shape[0]), tof, dist])
    head = ["packet"] + [f"tof_s_a{k}" for k in range(tof.shape[1])] + ["distance_m"]
    write_csv(ctx.path("tof.csv"), rows, header=head)


def _aoa(ctx, use_rco=True):
    rco = ctx.state.get("rco") if use_rco else None
    e = features.naive_aoa(ctx.need_csi("aoa"), ctx.channel, rco=rco)
    rows = np.column_stack([np.arange(e.shape[1]), e.T])
    write_csv(ctx.path("aoa.csv"), rows, header=["packet", "ex", "ey", "ez"])


def _music(ctx, n_sources=1, grid=(-90, 90, 1), subcarrier=None, ltf=0):
    H = ctx.need_csi("music")
    s = H.shape[1] // 2 if subcarrier is None else int(subcarrier)
    X = H[:, s, :, int(ltf)].T
    lo, hi, step = grid
    angles = np.arange(lo, hi + step / 2, step)
    lam = float(ctx.channel.wavelengths[s])
    spec = features.music_spectrum(X, ctx.channel.antenna_locations, lam, angles, int(n_sources))
    write_csv(ctx.path("music.csv"), np.column_stack([spec.grid, spec.q_values]),
              header=["angle_deg", "q"])
    write_csv(ctx.path("music_peaks.csv"), [[p] for p in spec.peaks()], header=["angle_deg"])


def _spectrum(ctx, window_len=125, window_type="gaussian", nfft=None):
    sp = features.doppler_spectrogram(ctx.need_csi("spectrum"), ctx.channel, int(window_len),
                                      window_type, nfft=nfft)
    write_matrix_csv(ctx.path("spectrum.csv"), sp.magnitude, sp.freq_axis, sp.time_axis)


def _speed(ctx, max_lag=0.5):
    est = features.estimate_speed(ctx.need_csi("speed"), ctx.channel, float(max_lag))
    write_csv(ctx.path("speed.csv"), [[est.v, est.tau0]], header=["v_mps", "tau0_s"])
    write_csv(ctx.path("acf.csv"), np.column_stack([est.lags, est.acf]), header=["lag_s", "acf"])


def _links(items):
    try:
        return [bvp.LinkGeometry(tuple(l["tx"]), tuple(l["rx"]), float(l["wavelength"]))
                for l in items]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad link entry: {exc}") from None


def _bvp(ctx, links, grid=None, dfs=None, spectrograms=None, components=None,
         freq_axis=(-120, 120, 1), eta=1e-3, k_max=5, guard_hz=0.0, frame_step=1):
    """Three input modes: per-link spectrogram CSVs (one BVP per frame), a
    single-frame ``M x F`` CSV, or synthetic ``components`` [ix, iy, amp]."""
    g = bvp.VelocityGrid(**(grid or {}))
    geoms = _links(links)
    kw = dict(eta=float(eta), k_max=int(k_max), guard_hz=float(guard_hz))
    if spectrograms is not None:
        if len(spectrograms) != len(geoms):
            raise ConfigError(f"{len(spectrograms)} spectrograms but {len(geoms)} links")
        mats = [read_matrix_csv(path) for path in spectrograms]
        f = mats[0][1]
        if any(m[0].shape != mats[0][0].shape or not np.allclose(m[1], f) for m in mats):
            raise DataError("spectrograms must share one frequency axis and frame count")
        summary = []
        for t in range(0, mats[0][0].shape[1], int(frame_step)):
            D = np.array([m[0][:, t] for m in mats])
            res = bvp.estimate_bvp(D, geoms, g, f, **kw)
            write_matrix_csv(ctx.path(f"bvp_{t:05d}.csv"), res.velocity, g.centers, g.centers)
            summary.append([t, mats[0][2][t], res.objective, len(res.support)])
        write_csv(ctx.path("bvp_summary.csv"), summary,
                  header=["frame", "time_s", "objective", "n_support"])
        return
    if dfs is not None:
        D, _, f = read_matrix_csv(dfs)
    else:
        lo, hi, step = freq_axis
        f = np.arange(lo, hi + step / 2, step, dtype=float)
        V = np.zeros((g.n_bins_per_axis, g.n_bins_per_axis))
        for ix, iy, amp in components or []:
            V[int(ix), int(iy)] += float(amp)
        D = bvp.synth_dfs(V, geoms, g, f)
    res = bvp.estimate_bvp(D, geoms, g, f, **kw)
    write_matrix_csv(ctx.path("bvp.csv"), res.velocity, g.centers, g.centers)
    write_csv(ctx.path("bvp_summary.csv"), [[0, 0.0, res.objective, len(res.support)]],
              header=["frame", "time_s", "objective", "n_support"])


def _window(window):
    return WindowSpec(**(window or {"kind": "gaussian", "length": specgen.WINDOW_LEN}))


def _blurmat(ctx, window=None, padded_len=specgen.PADDED_LEN, crop_len=specgen.CROP_LEN, fs=1000):
    B = specgen.blur_matrix(_window(window), int(padded_len), int(crop_len), float(fs))
    ctx.state["blur"] = B
    n, b = np.divmod(np.arange(B.size), B.shape[1])
    write_csv(ctx.path("blurmat.csv"), np.column_stack([n, b, B.real.ravel(), B.imag.ravel()]),
              header=["row", "col", "re", "im"])


def _blur(ctx):
    if "blur" not in ctx.state:
        ctx.state["blur"] = specgen.blur_matrix()
    return ctx.state["blur"]


def _synth_spec(ctx, n_batch=200, n_max_components=specgen.N_MAX_COMPONENTS,
                noise_amp=specgen.AWGN_AMP):
    triples = specgen.synth_leaked(_blur(ctx), int(n_batch), int(n_max_components),
                                   float(noise_amp), seed=ctx.seed)
    ctx.state["synth"] = triples
    ideal = np.array([t.ideal for t in triples])
    noisy = np.array([t.noisy for t in triples])
    write_csv(ctx.path("synth_spec.csv"), _complex_long_rows([ideal, noisy]),
              header=["sample", "bin", "ideal_re", "ideal_im", "noisy_re", "noisy_im"])


def _enhance(ctx, ridge=1e-3, rel_threshold=0.2):
    triples = ctx.state.get("synth")
    if triples is None:
        raise DataError("enhance needs spectra from a preceding synth-spec step")
    noisy = np.array([t.noisy for t in triples])
    est = specgen.enhance_ls(noisy, _blur(ctx), float(ridge))
    write_csv(ctx.path("enhance.csv"), _complex_long_rows([est]),
              header=["sample", "bin", "re", "im"])
    f1 = specgen.support_f1([t.ideal for t in triples], est, float(rel_threshold))
    write_csv(ctx.path("enhance_summary.csv"), [[f1]], header=["support_f1"])


def _dataset_prep(ctx, samples=None, window=None, crop_len=specgen.CROP_LEN,
                  n_classes=None, n_domains=None):
    spec = _window(window)
    fs = ctx.channel.sample_rate
    if samples:
        items = [(as_tensor(read_csi1(s["input"])), int(s.get("label", 1)), int(s.get("domain", 1)))
                 for s in samples]
    else:
        items = [(ctx.need_csi("dataset-prep"), 1, 1)]
    mags, labels, domains = [], [], []
    for H, lab, dom in items:
        series = np.mean(np.abs(H) ** 2, axis=(1, 3)).T  # [A, T]
        series = series - series.mean(axis=1, keepdims=True)
        mags.append(specgen.csi_to_cropped_spec(series, fs, spec, int(crop_len)).magnitude)
        labels.append(lab)
        domains.append(dom)
    out = specgen.prep_dataset(mags, labels, domains, n_classes, n_domains)
    payload = encode_dataset(np.array([s.features for s in out]), np.array([s.label for s in out]),
                             np.array([s.domain for s in out]))
    atomic_write_bytes(ctx.path("dataset.csd"), payload)


# name -> (function, allowed params, params naming input files, produces a tensor)
STEPS = {
    "load": (_load, {"path"}, {"path"}, True),
    "simulate": (_simulate, {"model", "n_packets", "n_ltf", "multipath", "scene", "snr_db"}, set(), True),
    "inject": (_inject, set(sim.ErrorModel.__dataclass_fields__) | {"snr_db"}, set(), True),
    "sanitize": (_sanitize, {"ops", "calib", "agc_gains", "linear_interval"}, {"calib"}, True),
    "tof": (_tof, set(), set(), False),
    "aoa": (_aoa, {"use_rco"}, set(), False),
    "music": (_music, {"n_sources", "grid", "subcarrier", "ltf"}, set(), False),
    "spectrum": (_spectrum, {"window_len", "window_type", "nfft"}, set(), False),
    "speed": (_speed, {"max_lag"}, set(), False),
    "bvp": (_bvp, {"links", "grid", "dfs", "spectrograms", "components", "freq_axis", "eta",
                   "k_max", "guard_hz", "frame_step"}, {"dfs"}, False),
    "blurmat": (_blurmat, {"window", "padded_len", "crop_len", "fs"}, set(), False),
    "synth-spec": (_synth_spec, {"n_batch", "n_max_components", "noise_amp"}, set(), False),
    "enhance": (_enhance, {"ridge", "rel_threshold"}, set(), False),
    "dataset-prep": (_dataset_prep, {"samples", "window", "crop_len", "n_classes", "n_domains"},
                     set(), False),
}


def _input_files(cfg: PipelineConfig):
    files = [cfg.input] if cfg.input else []
    for s in cfg.steps:
        _, _, file_keys, _ = STEPS[s.name]
        files += [s.params[k] for k in file_keys if s.params.get(k)]
        if s.name == "dataset-prep":
            files += [item.get("input") for item in s.params.get("samples") or []]
        if s.name == "bvp":
            files += list(s.params.get("spectrograms") or [])
    return files


def validate(cfg: PipelineConfig):
    """Check step names, parameter keys and referenced files; raises ConfigError."""
    if cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {cfg.format!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg.seed!r}")
    for i, s in enumerate(cfg.steps):
        if s.name not in STEPS:
            raise ConfigError(f"step {i}: unknown step {s.name!r}; known: {sorted(STEPS)}")
        _, allowed, _, _ = STEPS[s.name]
        bad = set(s.params) - allowed
        if bad:
            raise ConfigError(f"step {i} ({s.name}): unknown parameters {sorted(bad)}")
        if s.name == "bvp" and "links" not in s.params:
            raise ConfigError(f"step {i} (bvp): 'links' is required")
        if s.name == "load" and "path" not in s.params:
            raise ConfigError(f"step {i} (load): 'path' is required")
    for f in _input_files(cfg):
        if not isinstance(f, str) or not os.path.isfile(f):
            raise ConfigError(f"referenced input file not found: {f!r}")
    try:
        return ChannelConfig.from_dict(cfg.channel)
    except DataError as exc:
        raise ConfigError(f"channel config: {exc}") from None


def _step_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint32)[0])


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Validate, then run every step in order and write ``manifest.json``.

    If a step raises, files this run wrote are removed and the error is
    re-raised with the step named.
    """
    channel = validate(cfg)
    out = Path(cfg.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg, out, channel)
    inputs = {f: file_sha256(f) for f in _input_files(cfg)}
    records = []
    steps = list(cfg.steps)
    if cfg.input:
        steps.insert(0, Step("load", {"path": cfg.input}))
    try:
        for i, s in enumerate(steps):
            fn, _, _, tensor = STEPS[s.name]
            ctx.seed = _step_seed(cfg.seed, i)
            n0 = len(ctx.written)
            t0 = time.perf_counter()
            try:
                fn(ctx, **s.params)
                if tensor:
                    ctx.save_tensor(s.name, s.save)
            except TypeError as exc:
                raise ConfigError(f"step {s.name!r}: {exc}") from None
            except Exception as exc:
                exc.step = s.name
                if exc.args and isinstance(exc.args[0], str):
                    exc.args = (f"step {i} ({s.name}): {exc.args[0]}",) + exc.args[1:]
                raise
            records.append({"step": s.name, "wall_time_s": time.perf_counter() - t0,
                            "outputs": [p.name for p in ctx.written[n0:]]})
    except BaseException:
        for p in ctx.written:
            p.unlink(missing_ok=True)
        if created:
            try:
                out.rmdir()
            except OSError:
                pass
        raise
    manifest = RunManifest(__version__, cfg.hash(), cfg.seed, inputs, records)
    atomic_write_bytes(out / "manifest.json",
                       (json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n").encode())
    return manifest


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(sim.load_json(path))


__all__ = ["PipelineConfig", "RunManifest", "Step", "STEPS", "run_pipeline", "validate",
           "load_config", "write_tensor_csv"]
