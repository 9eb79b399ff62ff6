"""Invertible sequence model over mel frames: affine couplings driven by a
causal prefix summary, exact log-likelihoods under a Gaussian or mixture
prior, gradient training, sampling, and latent-space style transfer.

Each coupling step scales and shifts frame t using statistics of frames
1..t-1 only (a zero summary stands in at t=1), so analysis is parallel
over frames while synthesis recovers frames sequentially. Log-scales are
squashed to [-7, 7] to keep determinants finite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import bundle
from .autodiff import Graph, Tensor, backward
from .errors import ConfigError, DataError, NumericsError
from .layers import ParameterSet, fan_in_uniform
from .optim import make_optimizer

LOG_S_CAP = 7.0
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class SphericalGaussian:
    dim: int

    def logpdf_frames(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return -0.5 * (np.sum(z**2, axis=1) + self.dim * LOG_2PI)

    def sample(self, n_frames: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
        return sigma * rng.standard_normal((n_frames, self.dim))

    @property
    def mean_frame(self) -> np.ndarray:
        return np.zeros(self.dim)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of diagonal Gaussians; weights positive and summing to 1."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    learnable: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.shape != (w.size, m.shape[1]) or v.shape != m.shape:
            raise ConfigError(f"inconsistent mixture shapes: {w.shape}, {m.shape}, {v.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ConfigError("mixture weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ConfigError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def logpdf_frames(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        diff = z[None, :, :] - self.means[:, None, :]
        per_comp = -0.5 * (
            np.sum(diff**2 / self.variances[:, None, :], axis=2)
            + np.sum(np.log(self.variances), axis=1)[:, None]
            + self.dim * LOG_2PI
        )
        per_comp += np.log(self.weights)[:, None]
        m = per_comp.max(axis=0)
        return m + np.log(np.exp(per_comp - m).sum(axis=0))

    def sample(self, n_frames: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
        comps = rng.choice(self.n_components, size=n_frames, p=self.weights)
        eps = rng.standard_normal((n_frames, self.dim))
        return self.means[comps] + sigma * np.sqrt(self.variances[comps]) * eps

    @property
    def mean_frame(self) -> np.ndarray:
        return self.weights @ self.means


def gmm_logpdf(z: np.ndarray, prior) -> float:
    """Log density of a single frame (or the total over a frame stack)."""
    return float(prior.logpdf_frames(np.atleast_2d(z)).sum())


def gmm_sample(prior, seed: int, n_frames: int = 1, sigma: float = 1.0) -> np.ndarray:
    """Draw frames from the prior: component by weight, then a Gaussian."""
    return prior.sample(n_frames, sigma, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class FlowConfig:
    frame_dim: int
    n_steps: int = 2
    hidden: int = 16
    text_vocab: int = 0
    text_embed: int = 8
    speaker_dim: int = 4
    reverse_time: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("need at least one coupling step")
        if self.frame_dim < 1:
            raise ConfigError("frame_dim must be >= 1")

    @property
    def cond_dim(self) -> int:
        return (self.text_embed if self.text_vocab else 0) + self.speaker_dim


class FlowModel:
    """A stack of coupling steps plus a prior and conditioning tables."""

    def __init__(self, config: FlowConfig, prior=None):
        self.config = config
        self.prior = prior if prior is not None else SphericalGaussian(config.frame_dim)
        rng = np.random.default_rng(config.seed)
        self.params = ParameterSet()
        d, h, c = config.frame_dim, config.hidden, config.cond_dim
        for k in range(config.n_steps):
            p = f"step{k}"
            self.params.add(f"{p}.Ws", fan_in_uniform(rng, (d, h), d))
            self.params.add(f"{p}.Wc", fan_in_uniform(rng, (c, h), max(c, 1)) if c else np.zeros((0, h), dtype=np.float32))
            self.params.add(f"{p}.bh", np.zeros(h, dtype=np.float32))
            self.params.add(f"{p}.Wls", 0.1 * fan_in_uniform(rng, (h, d), h))
            self.params.add(f"{p}.bls", np.zeros(d, dtype=np.float32))
            self.params.add(f"{p}.Wb", 0.1 * fan_in_uniform(rng, (h, d), h))
            self.params.add(f"{p}.bb", np.zeros(d, dtype=np.float32))
        if config.text_vocab:
            self.params.add("text_emb", 0.1 * rng.standard_normal((config.text_vocab, config.text_embed)).astype(np.float32))
        if config.speaker_dim:
            # the fixed speaker embedding: one learnable constant vector
            self.params.add("speaker", 0.1 * rng.standard_normal(config.speaker_dim).astype(np.float32))
        if isinstance(self.prior, GaussianMixture) and self.prior.learnable:
            self.params.add("prior.logits", np.log(self.prior.weights).astype(np.float32))
            self.params.add("prior.means", self.prior.means.astype(np.float32))
            self.params.add("prior.logvars", np.log(self.prior.variances).astype(np.float32))

    def current_prior(self):
        """Prior with any learnable parameters materialized from the params."""
        if "prior.logits" not in self.params:
            return self.prior
        logits = self.params["prior.logits"].data.astype(np.float64)
        w = np.exp(logits - logits.max())
        return GaussianMixture(
            weights=w / w.sum(),
            means=self.params["prior.means"].data.astype(np.float64),
            variances=np.exp(self.params["prior.logvars"].data.astype(np.float64)),
            learnable=True,
        )

    def conditioning(self, text_ids=None) -> np.ndarray:
        """Mean text embedding (when a table exists) joined with the speaker vector."""
        parts = []
        if self.config.text_vocab:
            if text_ids is not None and len(text_ids):
                ids = np.asarray(text_ids, dtype=np.int64) % self.config.text_vocab
                parts.append(self.params["text_emb"].data[ids].mean(axis=0))
            else:
                parts.append(np.zeros(self.config.text_embed))
        if self.config.speaker_dim:
            parts.append(self.params["speaker"].data)
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts).astype(np.float64)

    def step_reversed(self, k: int) -> bool:
        return self.config.reverse_time and (k % 2 == 1)


def _prefix_means(x: np.ndarray) -> np.ndarray:
    """Row t holds mean(x[0..t-1]); the first row is the zero summary."""
    t = x.shape[0]
    out = np.zeros_like(x)
    if t > 1:
        counts = np.arange(1, t, dtype=x.dtype)[:, None]
        out[1:] = np.cumsum(x[:-1], axis=0) / counts
    return out


def _step_nn(model: FlowModel, k: int, summaries: np.ndarray, cond: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(log_s, b) per frame from the causal summary and the conditioning."""
    p = model.params
    name = f"step{k}"
    pre = summaries @ p[f"{name}.Ws"].data.astype(np.float64) + p[f"{name}.bh"].data
    if cond.size:
        pre = pre + cond @ p[f"{name}.Wc"].data.astype(np.float64)
    h = np.tanh(pre)
    raw = h @ p[f"{name}.Wls"].data.astype(np.float64) + p[f"{name}.bls"].data
    log_s = LOG_S_CAP * np.tanh(raw / LOG_S_CAP)
    b = h @ p[f"{name}.Wb"].data.astype(np.float64) + p[f"{name}.bb"].data
    if not (np.all(np.isfinite(log_s)) and np.all(np.isfinite(b))):
        raise NumericsError("coupling network produced non-finite scale or bias")
    return log_s, b


def coupling_analyze(x: np.ndarray, cond: np.ndarray, model: FlowModel, k: int) -> tuple[np.ndarray, float]:
    """One step forward: x'_t = s_t * x_t + b_t; log-det is sum(log s)."""
    if not np.all(np.isfinite(x)):
        raise NumericsError("non-finite frames")
    if model.step_reversed(k):
        x = x[::-1]
    log_s, b = _step_nn(model, k, _prefix_means(x), cond)
    return np.exp(log_s) * x + b, float(log_s.sum())


def coupling_synthesize(x_prime: np.ndarray, cond: np.ndarray, model: FlowModel, k: int) -> np.ndarray:
    """Invert one step sequentially, re-deriving s,b from recovered frames."""
    if not np.all(np.isfinite(x_prime)):
        raise NumericsError("non-finite frames")
    t, d = x_prime.shape
    x = np.zeros_like(x_prime)
    running = np.zeros(d)
    for i in range(t):
        summary = (running / i)[None, :] if i else np.zeros((1, d))
        log_s, b = _step_nn(model, k, summary, cond)
        x[i] = (x_prime[i] - b[0]) * np.exp(-log_s[0])
        running += x[i]
    if model.step_reversed(k):
        x = x[::-1].copy()
    return x


def analyze(x: np.ndarray, cond: np.ndarray, model: FlowModel) -> tuple[np.ndarray, float]:
    """All steps in the analysis direction; returns (z, total log-det)."""
    total = 0.0
    for k in range(model.config.n_steps):
        x, log_det = coupling_analyze(x, cond, model, k)
        total += log_det
    return x, total


def synthesize(z: np.ndarray, cond: np.ndarray, model: FlowModel) -> np.ndarray:
    """All steps inverted in reverse order."""
    for k in reversed(range(model.config.n_steps)):
        z = coupling_synthesize(z, cond, model, k)
    return z


def log_likelihood(x: np.ndarray, cond: np.ndarray, model: FlowModel) -> float:
    """Exact log p(x): prior density of the latent plus the log-determinants."""
    z, log_det = analyze(np.asarray(x, dtype=np.float64), cond, model)
    return float(model.current_prior().logpdf_frames(z).sum()) + log_det


def sample(model: FlowModel, cond: np.ndarray | None = None, sigma: float = 1.0,
           n_frames: int = 32, seed: int = 0) -> np.ndarray:
    """Draw a latent (std scaled by sigma) and run the inverse stack."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    cond = model.conditioning() if cond is None else cond
    prior = model.current_prior()
    if sigma == 0.0 and isinstance(prior, SphericalGaussian):
        z = np.tile(prior.mean_frame, (n_frames, 1))
    else:
        z = prior.sample(n_frames, sigma, np.random.default_rng(seed))
    return synthesize(z, cond, model)


def style_transfer(model: FlowModel, style_frames: list[np.ndarray], cond: np.ndarray | None = None,
                   seed: int = 0, n_frames: int | None = None, var_floor: float = 1e-4) -> np.ndarray:
    """Resample near the style clips' latents.

    Each style clip is analyzed to its latent; a diagonal Gaussian is fitted
    to the pooled latent frames (variance floored), sampled, and synthesized.
    """
    if not style_frames:
        raise DataError("need at least one style clip")
    cond = model.conditioning() if cond is None else cond
    latents = [analyze(np.asarray(f, dtype=np.float64), cond, model)[0] for f in style_frames]
    pooled = np.concatenate(latents, axis=0)
    mu = pooled.mean(axis=0)
    var = np.maximum(pooled.var(axis=0), var_floor)
    n = n_frames if n_frames is not None else style_frames[0].shape[0]
    rng = np.random.default_rng(seed)
    z = mu + np.sqrt(var) * rng.standard_normal((n, mu.size))
    return synthesize(z, cond, model)


def fit_style_gaussian(model: FlowModel, style_frames: list[np.ndarray], cond: np.ndarray | None = None,
                       var_floor: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """The (mean, floored variance) the style-transfer sampler draws from."""
    if not style_frames:
        raise DataError("need at least one style clip")
    cond = model.conditioning() if cond is None else cond
    latents = [analyze(np.asarray(f, dtype=np.float64), cond, model)[0] for f in style_frames]
    pooled = np.concatenate(latents, axis=0)
    return pooled.mean(axis=0), np.maximum(pooled.var(axis=0), var_floor)


# ---------------------------------------------------------------------------
# training


def _prefix_mean_matrix(t: int, dtype=np.float32) -> np.ndarray:
    mat = np.zeros((t, t), dtype=dtype)
    for i in range(1, t):
        mat[i, :i] = 1.0 / i
    return mat


def nll_tensor(model: FlowModel, frames: np.ndarray, text_ids=None) -> Tensor:
    """Differentiable negative log-likelihood of one clip."""
    cfg = model.config
    p = model.params
    t = frames.shape[0]
    x = Tensor(frames.astype(np.float32))
    mix = Tensor(_prefix_mean_matrix(t))

    cond_parts = []
    if cfg.text_vocab:
        if text_ids is not None and len(text_ids):
            ids = np.asarray(text_ids, dtype=np.int64) % cfg.text_vocab
            cond_parts.append(ad.tmean(ad.gather_rows(p["text_emb"], ids), axis=0))
        else:
            cond_parts.append(Tensor(np.zeros(cfg.text_embed, dtype=np.float32)))
    if cfg.speaker_dim:
        cond_parts.append(p["speaker"])
    cond = ad.concat(cond_parts, axis=0) if cond_parts else None

    log_det_total = None
    for k in range(cfg.n_steps):
        if model.step_reversed(k):
            x = ad.flip(x, axis=0)
        pre = ad.add(ad.matmul(ad.matmul(mix, x), p[f"step{k}.Ws"]), p[f"step{k}.bh"])
        if cond is not None and cfg.cond_dim:
            pre = ad.add(pre, ad.matmul(cond, p[f"step{k}.Wc"]))
        h = ad.tanh(pre)
        raw = ad.add(ad.matmul(h, p[f"step{k}.Wls"]), p[f"step{k}.bls"])
        log_s = ad.mul(ad.tanh(ad.mul(raw, 1.0 / LOG_S_CAP)), LOG_S_CAP)
        b = ad.add(ad.matmul(h, p[f"step{k}.Wb"]), p[f"step{k}.bb"])
        x = ad.add(ad.mul(ad.exp(log_s), x), b)
        step_det = ad.tsum(log_s)
        log_det_total = step_det if log_det_total is None else ad.add(log_det_total, step_det)

    if "prior.logits" in p:
        k_comp = p["prior.logits"].data.shape[0]
        d = cfg.frame_dim
        log_w = ad.sub(p["prior.logits"], ad.logsumexp(p["prior.logits"], axis=0, keepdims=True))
        z3 = ad.reshape(x, (1, t, d))
        means = ad.reshape(p["prior.means"], (k_comp, 1, d))
        logvars = ad.reshape(p["prior.logvars"], (k_comp, 1, d))
        diff = ad.sub(z3, means)
        quad = ad.tsum(ad.div(ad.mul(diff, diff), ad.exp(logvars)), axis=2)
        logdetvar = ad.tsum(logvars, axis=2)
        per_comp = ad.mul(ad.add(ad.add(quad, logdetvar), d * LOG_2PI), -0.5)
        per_comp = ad.add(per_comp, ad.reshape(log_w, (k_comp, 1)))
        log_p = ad.tsum(ad.logsumexp(per_comp, axis=0))
    elif isinstance(model.prior, GaussianMixture):
        prior = model.prior
        k_comp, d = prior.n_components, cfg.frame_dim
        z3 = ad.reshape(x, (1, t, d))
        diff = ad.sub(z3, Tensor(prior.means.astype(np.float32).reshape(k_comp, 1, d)))
        inv_var = Tensor((1.0 / prior.variances).astype(np.float32).reshape(k_comp, 1, d))
        quad = ad.tsum(ad.mul(ad.mul(diff, diff), inv_var), axis=2)
        const = (np.log(prior.weights) - 0.5 * (np.log(prior.variances).sum(axis=1) + d * LOG_2PI)).astype(np.float32)
        per_comp = ad.add(ad.mul(quad, -0.5), Tensor(const.reshape(k_comp, 1)))
        log_p = ad.tsum(ad.logsumexp(per_comp, axis=0))
    else:
        d = cfg.frame_dim
        log_p = ad.mul(ad.add(ad.tsum(ad.mul(x, x)), t * d * LOG_2PI), -0.5)

    return ad.mul(ad.add(log_p, log_det_total), -1.0)


@dataclass
class FlowTrainReport:
    epoch_nll: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epoch_nll": self.epoch_nll}


def train_flow(items: list, model: FlowModel, epochs: int = 30, lr: float = 1e-2,
               optimizer: str = "adam", seed: int = 0) -> FlowTrainReport:
    """Minimize mean NLL over (frames, text_ids) pairs by gradient descent.

    Deterministic given the seed: items are visited in a seeded shuffle
    each epoch, one gradient step per item.
    """
    if not items:
        raise DataError("empty training set")
    items = [(np.asarray(f, dtype=np.float32), t) for f, t in items]
    opt = make_optimizer(optimizer, lr=lr)
    rng = np.random.default_rng(seed)
    report = FlowTrainReport()
    for _ in range(epochs):
        order = rng.permutation(len(items))
        total = 0.0
        for idx in order:
            frames, text_ids = items[idx]
            model.params.zero_grad()
            with Graph() as g:
                loss = nll_tensor(model, frames, text_ids)
            backward(g, loss)
            opt.step(model.params)
            total += loss.item() / frames.shape[0]
        nll = total / len(items)
        if not np.isfinite(nll):
            raise NumericsError("training diverged to a non-finite loss")
        report.epoch_nll.append(nll)
    return report


def mean_log_likelihood(items: list, model: FlowModel) -> float:
    """Per-frame mean log-likelihood over a held-out set."""
    if not items:
        raise DataError("empty evaluation set")
    total = 0.0
    n = 0
    for frames, text_ids in items:
        cond = model.conditioning(text_ids)
        total += log_likelihood(np.asarray(frames, dtype=np.float64), cond, model)
        n += np.asarray(frames).shape[0]
    return total / n


def save_flow(model: FlowModel, path, extra: dict | None = None) -> None:
    """Checkpoint the coupling stack, prior, and any caller metadata."""
    tensors = dict(model.params.state_dict())
    prior_meta: dict = {"type": "gaussian"}
    if isinstance(model.prior, GaussianMixture):
        prior_meta = {"type": "gmm", "learnable": model.prior.learnable}
        if not model.prior.learnable:
            tensors["fixed_prior.weights"] = model.prior.weights
            tensors["fixed_prior.means"] = model.prior.means
            tensors["fixed_prior.variances"] = model.prior.variances
    meta = {"kind": "flow", "config": asdict(model.config), "prior": prior_meta, "extra": extra or {}}
    bundle.save(tensors, path, meta=meta)


def load_flow(path) -> tuple[FlowModel, dict]:
    """Rebuild a flow checkpoint; returns (model, caller metadata)."""
    tensors, meta = bundle.load(path)
    if not meta or meta.get("kind") != "flow":
        raise ConfigError(f"{path} is not a flow checkpoint")
    config = FlowConfig(**meta["config"])
    prior_meta = meta.get("prior", {"type": "gaussian"})
    if prior_meta["type"] == "gmm":
        if prior_meta.get("learnable"):
            # placeholder shapes; the learnable values live in the params
            k = tensors["prior.logits"].shape[0]
            prior = GaussianMixture(
                weights=np.full(k, 1.0 / k),
                means=tensors["prior.means"].astype(np.float64),
                variances=np.exp(tensors["prior.logvars"].astype(np.float64)),
                learnable=True,
            )
        else:
            prior = GaussianMixture(
                weights=tensors.pop("fixed_prior.weights").astype(np.float64),
                means=tensors.pop("fixed_prior.means").astype(np.float64),
                variances=tensors.pop("fixed_prior.variances").astype(np.float64),
            )
    else:
        prior = SphericalGaussian(config.frame_dim)
    model = FlowModel(config, prior=prior)
    model.params.load_state({k: v for k, v in tensors.items() if not k.startswith("fixed_prior.")})
    return model, meta.get("extra", {})
