"""Adversarial training: value functions, critic/generator updates, exact W1, pair training."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import nn
from .errors import InvalidConfig, InvalidDistribution, NonFiniteLoss, ShapeMismatch
from .imaging import ImageBuffer, denormalize, normalize, psnr
from .rng import LaneRng, derive_seed

WGAN = "WGAN"
GAN_LOG = "GAN_LOG"
PROB_EPS = 1e-7
GENERATOR_KINDS = ("mlp", "conv")
CRITIC_KINDS = ("conv", "mlp")


# -- value functions -----------------------------------------------------------

@dataclass
class ValueEstimate:
    value: float
    terms: list[float]


def _scores(d: nn.Network, batch: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(d, batch)
    if out.shape[1:] != (1,):
        raise ShapeMismatch(f"critic must emit one score per sample, got {out.shape}")
    return out[:, 0]


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def _clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def gan_value_from_probs(p_real, p_fake) -> ValueEstimate:
    """mean log D(x) + mean log(1 - D(G(z))) given discriminator probabilities."""
    p_real = _clamp_prob(np.asarray(p_real, dtype=np.float64))
    p_fake = _clamp_prob(np.asarray(p_fake, dtype=np.float64))
    real_terms = np.log(p_real)
    fake_terms = np.log1p(-p_fake)
    # One term per (real, fake) pairing keeps value == mean(terms) for unequal batches.
    terms = (real_terms[:, None] + fake_terms[None, :]).ravel()
    value = float(real_terms.mean() + fake_terms.mean())
    return ValueEstimate(value, terms.tolist())


def gan_value(d: nn.Network, real_batch: np.ndarray, fake_batch: np.ndarray) -> ValueEstimate:
    """Log-loss value function with the critic score squashed through a logistic."""
    return gan_value_from_probs(_sigmoid(_scores(d, real_batch)),
                                _sigmoid(_scores(d, fake_batch)))


def critic_w_estimate(d: nn.Network, real_batch: np.ndarray, fake_batch: np.ndarray) -> float:
    """mean D(real) - mean D(fake)."""
    return float(_scores(d, real_batch).mean() - _scores(d, fake_batch).mean())


# -- configuration -------------------------------------------------------------

@dataclass
class TrainingConfig:
    iterations: int = 20000
    n_critic: int = 5
    clip_c: float = 0.01
    lr_d: float = 5e-5
    lr_g: float = 5e-5
    batch: int = 4
    jitter_sigma: float = 0.02
    seed: int = 0
    target_psnr: float = 35.0
    loss_mode: str = WGAN
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    log_every: int = 100
    generator: str = "mlp"
    gen_hidden: int = 64
    gen_widths: tuple[int, ...] = (16, 32, 16)
    critic: str = "conv"
    critic_hidden: int = 64
    critic_widths: tuple[int, ...] = (16, 32)

    def __post_init__(self):
        self.gen_widths = tuple(int(v) for v in self.gen_widths)
        self.critic_widths = tuple(int(v) for v in self.critic_widths)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.iterations < 1:
            problems.append("iterations must be >= 1")
        if self.n_critic < 1:
            problems.append("n_critic must be >= 1")
        if not self.clip_c > 0:
            problems.append("clip_c must be > 0")
        if not 0 <= self.jitter_sigma < 0.1:
            problems.append("jitter_sigma must lie in [0, 0.1)")
        if self.batch < 1:
            problems.append("batch must be >= 1")
        if self.lr_d < 0 or self.lr_g < 0:
            problems.append("learning rates must be >= 0")
        if self.loss_mode not in (WGAN, GAN_LOG):
            problems.append(f"loss_mode must be {WGAN} or {GAN_LOG}")
        if self.generator not in GENERATOR_KINDS:
            problems.append(f"generator must be one of {GENERATOR_KINDS}")
        if self.critic not in CRITIC_KINDS:
            problems.append(f"critic must be one of {CRITIC_KINDS}")
        if self.gen_hidden < 1 or self.critic_hidden < 1:
            problems.append("hidden widths must be >= 1")
        if self.log_every < 1:
            problems.append("log_every must be >= 1")
        if problems:
            raise InvalidConfig("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_widths"] = list(self.gen_widths)
        d["critic_widths"] = list(self.critic_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "TrainingConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return TrainingConfig.from_dict(d)


# -- update steps --------------------------------------------------------------

def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NonFiniteLoss("non-finite value in training step")


def _critic_objective_and_grad(scores: np.ndarray, n_real: int, mode: str):
    """Objective the critic ascends, and its gradient w.r.t. the raw scores."""
    s_real, s_fake = scores[:n_real], scores[n_real:]
    n_fake = s_fake.size
    if mode == WGAN:
        obj = s_real.mean() - s_fake.mean()
        grad = np.concatenate([np.full(n_real, 1.0 / n_real), np.full(n_fake, -1.0 / n_fake)])
        return float(obj), grad
    p_real, p_fake = _sigmoid(s_real), _sigmoid(s_fake)
    obj = gan_value_from_probs(p_real, p_fake).value
    # d/ds log(sigmoid(s)) = 1 - p; d/ds log(1 - sigmoid(s)) = -p; zero where clamped.
    live_r = (p_real > PROB_EPS) & (p_real < 1 - PROB_EPS)
    live_f = (p_fake > PROB_EPS) & (p_fake < 1 - PROB_EPS)
    grad = np.concatenate([np.where(live_r, 1.0 - p_real, 0.0) / n_real,
                           np.where(live_f, -p_fake, 0.0) / n_fake])
    return obj, grad


def _generator_objective_and_grad(scores: np.ndarray, mode: str):
    """Objective the generator descends, and its gradient w.r.t. the critic scores."""
    n = scores.size
    if mode == WGAN:
        return float(-scores.mean()), np.full(n, -1.0 / n)
    p = _sigmoid(scores)
    pc = _clamp_prob(p)
    obj = float(np.log1p(-pc).mean())
    live = (p > PROB_EPS) & (p < 1 - PROB_EPS)
    return obj, np.where(live, -p, 0.0) / n


def critic_objective(d: nn.Network, real_batch, fake_batch, mode: str = WGAN) -> float:
    if mode == WGAN:
        return critic_w_estimate(d, real_batch, fake_batch)
    return gan_value(d, real_batch, fake_batch).value


def generate(g: nn.Network, secret_input: np.ndarray):
    """Generator forward pass with the output viewed in the input's image shape."""
    out, trace = nn.forward(g, secret_input)
    if out[0].size != math.prod(secret_input.shape[1:]):
        raise ShapeMismatch(f"generator emits {out.shape[1:]} for input {secret_input.shape[1:]}")
    return out.reshape(secret_input.shape), trace


def critic_step(d: nn.Network, g: nn.Network, real_batch: np.ndarray, secret_input: np.ndarray,
                cfg: TrainingConfig, opt: nn.OptimizerState, fake_batch: np.ndarray | None = None,
                report_objective: bool = True) -> float:
    """One critic ascent step with the generator held fixed.

    ``fake_batch`` may be passed when the caller already holds
    ``forward(g, secret_input)``; it is never differentiated through.
    Returns the post-step objective (NaN if ``report_objective`` is False).
    """
    if fake_batch is None:
        fake_batch, _ = generate(g, secret_input)
    real_batch = np.asarray(real_batch)
    if real_batch.shape[1:] != fake_batch.shape[1:]:
        raise ShapeMismatch(f"real {real_batch.shape} vs fake {fake_batch.shape}")
    n_real = real_batch.shape[0]
    both = np.concatenate([real_batch.astype(nn.COMPUTE), fake_batch.astype(nn.COMPUTE)])
    scores, trace = nn.forward(d, both)
    _, grad = _critic_objective_and_grad(scores[:, 0], n_real, cfg.loss_mode)
    grads, _ = nn.backward(d, trace, grad[:, None])
    _check_finite(*grads)
    nn.rmsprop_step(d, grads, opt, nn.ASCENT)
    if cfg.loss_mode == WGAN:
        nn.clip_weights(d, cfg.clip_c)
    if not report_objective:
        return math.nan
    post, _ = nn.forward(d, both)
    obj, _ = _critic_objective_and_grad(post[:, 0], n_real, cfg.loss_mode)
    _check_finite(obj)
    return obj


def _generator_update(d, g, secret_input, cfg, opt):
    fake, g_trace = generate(g, secret_input)
    scores, d_trace = nn.forward(d, fake)
    _, grad = _generator_objective_and_grad(scores[:, 0], cfg.loss_mode)
    _, dx = nn.backward(d, d_trace, grad[:, None], need_input_grad=True)
    grads, _ = nn.backward(g, g_trace, dx.reshape((dx.shape[0],) + g.output_shape))
    _check_finite(*grads)
    nn.rmsprop_step(g, grads, opt, nn.DESCENT)
    fake, _ = generate(g, secret_input)
    scores, _ = nn.forward(d, fake)
    obj, _ = _generator_objective_and_grad(scores[:, 0], cfg.loss_mode)
    _check_finite(obj, fake)
    return obj, fake


def generator_step(d: nn.Network, g: nn.Network, secret_input: np.ndarray,
                   cfg: TrainingConfig, opt: nn.OptimizerState) -> float:
    """One generator descent step with the critic frozen; returns the post-step objective."""
    obj, _ = _generator_update(d, g, secret_input, cfg, opt)
    return obj


# -- exact earth mover's distance ----------------------------------------------

@dataclass
class DiscreteDistribution:
    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.float64).ravel()
        self.mass = np.asarray(self.mass, dtype=np.float64).ravel()
        if self.support.size != self.mass.size or self.support.size == 0:
            raise InvalidDistribution("support and mass must be equal-length and non-empty")
        if not np.all(np.isfinite(self.support)) or not np.all(np.isfinite(self.mass)):
            raise InvalidDistribution("non-finite support or mass")
        if np.any(self.mass < 0):
            raise InvalidDistribution("negative mass")
        if abs(self.mass.sum() - 1.0) > 1e-9:
            raise InvalidDistribution(f"masses sum to {self.mass.sum()!r}, not 1")

    @classmethod
    def point(cls, x: float) -> "DiscreteDistribution":
        return cls([x], [1.0])


@dataclass
class TransportPlan:
    """``matrix[i, j]`` is the mass moved from p.support[i] to q.support[j]."""

    matrix: np.ndarray

    def cost(self, p: DiscreteDistribution, q: DiscreteDistribution) -> float:
        dist = np.abs(p.support[:, None] - q.support[None, :])
        return float((self.matrix * dist).sum())


MAX_SUPPORT = 64


def exact_w1(p: DiscreteDistribution, q: DiscreteDistribution) -> tuple[float, TransportPlan]:
    """Exact W1 under |x - y| via the monotone (north-west corner) plan on sorted supports.

    For a convex cost on the line the monotone coupling is optimal, so the
    greedy plan is an exact LP solution; the returned plan is indexed in the
    caller's original support order.
    """
    for dist in (p, q):
        if not isinstance(dist, DiscreteDistribution):
            raise InvalidDistribution("expected DiscreteDistribution")
        if dist.support.size > MAX_SUPPORT:
            raise InvalidDistribution(f"support larger than {MAX_SUPPORT}")
    pi, qi = np.argsort(p.support, kind="stable"), np.argsort(q.support, kind="stable")
    a, b = p.mass[pi].copy(), q.mass[qi].copy()
    plan = np.zeros((p.support.size, q.support.size))
    i = j = 0
    while i < a.size and j < b.size:
        moved = min(a[i], b[j])
        plan[pi[i], qi[j]] += moved
        a[i] -= moved
        b[j] -= moved
        # min() leaves at least one side exactly empty; ties advance both.
        if a[i] <= 0.0:
            i += 1
        if b[j] <= 0.0:
            j += 1
    tp = TransportPlan(plan)
    return tp.cost(p, q), tp


def w1_cdf(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """W1 on the line as the integral of |F_p - F_q| (independent of the plan)."""
    pts = np.union1d(p.support, q.support)
    fp = np.array([p.mass[p.support <= x].sum() for x in pts])
    fq = np.array([q.mass[q.support <= x].sum() for x in pts])
    return float(np.sum(np.abs(fp - fq)[:-1] * np.diff(pts)))


def fit_critic_1d(p: DiscreteDistribution, q: DiscreteDistribution, clip_c: float = 0.01,
                  hidden: int = 16, steps: int = 2000, lr: float = 1e-3, seed: int = 0) -> float:
    """Train a clipped scalar critic on two 1-D distributions and return its W estimate.

    Samples are the support points fed as 1-element tensors, weighted by their
    masses, so the objective is E_p[D] - E_q[D] exactly rather than a sampled mean.
    """
    d = nn.init_network([nn.dense(1, hidden), nn.leaky(0.2), nn.dense(hidden, 1)], seed, (1,),
                        role=nn.CRITIC)
    opt = nn.OptimizerState.for_network(d, lr)
    both = np.concatenate([p.support, q.support])[:, None]
    weights = np.concatenate([p.mass, -q.mass])[:, None]
    for _ in range(steps):
        _, trace = nn.forward(d, both)
        grads, _ = nn.backward(d, trace, weights)
        _check_finite(*grads)
        nn.rmsprop_step(d, grads, opt, nn.ASCENT)
        nn.clip_weights(d, clip_c)
    scores, _ = nn.forward(d, both)
    return float(np.sum(scores * weights))


# -- pair training ---------------------------------------------------------------

@dataclass
class LogRow:
    iteration: int
    critic_loss: float
    gen_loss: float
    w_estimate: float
    psnr: float


@dataclass
class TrainingReport:
    rows: list[LogRow] = field(default_factory=list)
    converged: bool = False
    final_psnr: float = math.nan
    wall_time: float = 0.0
    iterations_run: int = 0

    def append(self, row: LogRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("log iterations must be strictly increasing")
        self.rows.append(row)

    def to_text(self) -> str:
        """Tab-separated log, one row per logged step."""
        return "".join(
            f"{r.iteration}\t{r.critic_loss!r}\t{r.gen_loss!r}\t{r.w_estimate!r}\t{r.psnr!r}\n"
            for r in self.rows
        )

    @staticmethod
    def parse_text(text: str) -> list[LogRow]:
        rows = []
        for line in text.splitlines():
            it, cl, gl, w, ps = line.split("\t")
            rows.append(LogRow(int(it), float(cl), float(gl), float(w), float(ps)))
        return rows


def build_generator(cfg: TrainingConfig, height: int, width: int) -> nn.Network:
    if cfg.generator == "mlp":
        layers = nn.mlp_generator_spec(height, width, cfg.gen_hidden)
    else:
        layers = nn.generator_spec(1, cfg.gen_widths)
    return nn.init_network(layers, derive_seed(cfg.seed, 1), (1, height, width),
                           role=nn.GENERATOR)


def build_critic(cfg: TrainingConfig, height: int, width: int) -> nn.Network:
    if cfg.critic == "mlp":
        layers = nn.mlp_critic_spec(height, width, cfg.critic_hidden)
    else:
        layers = nn.critic_spec(height, width, 1, cfg.critic_widths)
    return nn.init_network(layers, derive_seed(cfg.seed, 2), (1, height, width), role=nn.CRITIC)


def train_pair(secret: ImageBuffer, target: ImageBuffer, cfg: TrainingConfig,
               progress=None) -> tuple[nn.Network, TrainingReport]:
    """Train a generator that maps ``secret`` onto ``target``.

    The critic's real data is ``target`` replicated ``cfg.batch`` times with
    Gaussian jitter; the generator input is the secret itself, so the trained
    network is a deterministic function of (secret, target, cfg).
    """
    cfg.validate()
    if secret.shape != target.shape:
        raise ShapeMismatch(f"secret {secret.shape} vs target {target.shape}")
    h, w = secret.shape
    g = build_generator(cfg, h, w)
    d = build_critic(cfg, h, w)
    opt_g = nn.OptimizerState.for_network(g, cfg.lr_g, cfg.rms_decay, cfg.rms_eps)
    opt_d = nn.OptimizerState.for_network(d, cfg.lr_d, cfg.rms_decay, cfg.rms_eps)
    jitter = LaneRng(derive_seed(cfg.seed, 3))

    x = normalize(secret)[None].astype(nn.COMPUTE)
    tgt = normalize(target)[None].astype(nn.COMPUTE)
    report = TrainingReport()
    start = time.perf_counter()
    fake, _ = generate(g, x)

    try:
        for it in range(1, cfg.iterations + 1):
            log_now = it == 1 or it % cfg.log_every == 0 or it == cfg.iterations
            critic_loss = math.nan
            for k in range(cfg.n_critic):
                noise = jitter.normal(cfg.batch * h * w).reshape(cfg.batch, 1, h, w)
                real = tgt + cfg.jitter_sigma * noise
                last = k == cfg.n_critic - 1
                critic_loss = critic_step(d, g, real, x, cfg, opt_d, fake_batch=fake,
                                          report_objective=last and log_now)
            critic_fake = fake
            gen_loss, fake = _generator_update(d, g, x, cfg, opt_g)
            current = psnr(denormalize(fake[0]), target)
            done = current >= cfg.target_psnr
            if log_now or done:
                if not log_now:
                    critic_loss = critic_objective(d, real, critic_fake, cfg.loss_mode)
                w_est = critic_w_estimate(d, tgt, fake)
                report.append(LogRow(it, critic_loss, gen_loss, w_est, current))
                if progress is not None:
                    progress(report.rows[-1])
            report.iterations_run = it
            report.final_psnr = current
            if done:
                report.converged = True
                break
    except NonFiniteLoss as exc:
        report.wall_time = time.perf_counter() - start
        raise NonFiniteLoss(str(exc), report) from None
    report.wall_time = time.perf_counter() - start
    return g, report


def run_generator(g: nn.Network, img: ImageBuffer) -> ImageBuffer:
    """denormalize(forward(g, normalize(img)))."""
    if (1,) + img.shape != g.input_shape:
        raise ShapeMismatch(f"generator expects {g.input_shape[1:]}, image is {img.shape}")
    out, _ = generate(g, normalize(img)[None])
    return denormalize(out[0])
