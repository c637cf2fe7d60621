"""
Group-relative policy optimization on a toy structured-prediction policy.

The policy maps an event feature vector ``x`` to four independent heads:

    event type   softmax(W_type x) over the 10 taxonomy labels
    direction    softmax(W_dir x) over (positive, negative, neutral)
    strength     Bernoulli(sigmoid(w_str . x)), 1 = strong
    CAR          Normal(car_scale * w_car . x, car_std^2)

One action per event; its log-probability is the sum over heads. Rewards come
from :func:`evtrade.hgrm.compose_reward`, advantages are centered within each
group of samples (optionally divided by the population std), and the update
ascends ``mean(A * log pi) - kl_coeff * KL(pi || pi_ref)`` with the global
gradient norm clipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .hgrm import Prediction, RewardConfig, compose_reward
from .taxonomy import DIRECTIONS, EVENT_TYPES, sign_direction

logger = logging.getLogger(__name__)

HEADS = ("W_type", "W_dir", "w_str", "w_car")
N_TYPES = len(EVENT_TYPES)


class PolicyError(RuntimeError):
    pass


# -- environment ------------------------------------------------------------

@dataclass
class EventSet:
    features: np.ndarray  # (n, D)
    types: np.ndarray     # (n,) taxonomy indices
    cars: np.ndarray      # (n,)

    def __len__(self):
        return len(self.cars)

    def truth(self, k):
        return float(self.cars[k]), EVENT_TYPES[self.types[k]]


@dataclass
class ToyEnvironment:
    """Synthetic events: one-hot event type, a noisy |CAR| cue and a bias feature.

    Generative rule: ``car = sign_k * mean_abs_k * exp(mag_noise * z)``, where
    the sign is flipped with probability ``flip_prob`` (0 makes the event type
    fully determine the direction).
    """

    train: EventSet
    test: EventSet
    type_sign: np.ndarray
    type_mean_abs: np.ndarray
    seed: int
    flip_prob: float = 0.0
    cue_scale: float = 0.05

    @property
    def dim(self):
        return self.train.features.shape[1]


def make_environment(n_train=2000, n_test=500, seed=0, flip_prob=0.0, mag_noise=0.3, cue_noise=0.2):
    rng = np.random.default_rng(seed)
    sign = np.where(np.arange(N_TYPES) % 2 == 0, 1.0, -1.0)
    rng.shuffle(sign)
    mean_abs = rng.uniform(0.01, 0.05, size=N_TYPES)
    cue_scale = 0.05

    def draw(n):
        types = rng.integers(0, N_TYPES, size=n)
        mag = mean_abs[types] * np.exp(mag_noise * rng.standard_normal(n))
        flip = rng.random(n) < flip_prob
        cars = np.where(flip, -1.0, 1.0) * sign[types] * mag
        cue = mag / cue_scale + cue_noise * rng.standard_normal(n)
        x = np.zeros((n, N_TYPES + 2))
        x[np.arange(n), types] = 1.0
        x[:, N_TYPES] = cue
        x[:, N_TYPES + 1] = 1.0
        return EventSet(x, types, cars)

    train = draw(n_train)
    test = draw(n_test)
    return ToyEnvironment(train, test, sign, mean_abs, seed, flip_prob, cue_scale)


# -- policy -----------------------------------------------------------------

def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


@dataclass
class ToyPolicy:
    W_type: np.ndarray
    W_dir: np.ndarray
    w_str: np.ndarray
    w_car: np.ndarray
    car_std: float = 0.02
    # CAR mean in units of car_scale keeps that head's gradient O(1)
    car_scale: float = 0.02
    reference: dict = field(default=None, repr=False)

    @classmethod
    def init(cls, dim, car_std=0.02, scale=0.0, seed=0, car_scale=0.02):
        rng = np.random.default_rng(seed)
        p = cls(scale * rng.standard_normal((N_TYPES, dim)), scale * rng.standard_normal((len(DIRECTIONS), dim)),
                scale * rng.standard_normal(dim), scale * rng.standard_normal(dim), car_std, car_scale)
        p.reference = p.params()
        return p

    def params(self):
        return {h: getattr(self, h).copy() for h in HEADS}

    def with_params(self, params):
        return ToyPolicy(*(np.array(params[h], dtype=float) for h in HEADS), self.car_std, self.car_scale,
                          self.reference)

    def snapshot_reference(self):
        self.reference = self.params()
        return self

    def heads(self, X, params=None):
        """Log-probabilities of the discrete heads and the CAR mean for features ``X`` (n, D)."""
        p = params or self.params()
        return {
            "type": _log_softmax(X @ p["W_type"].T),
            "dir": _log_softmax(X @ p["W_dir"].T),
            "str_logit": X @ p["w_str"],
            "mu": self.car_scale * (X @ p["w_car"]),
        }

    def probabilities(self, X):
        h = self.heads(np.atleast_2d(X))
        return np.exp(h["type"]), np.exp(h["dir"]), 1.0 / (1.0 + np.exp(-h["str_logit"])), h["mu"]


@dataclass
class Action:
    event_type: int
    direction: int
    strong: int
    car: float

    def prediction(self):
        return Prediction(car_hat=self.car, direction_hat=DIRECTIONS[self.direction],
                          strength_hat="strong" if self.strong else "weak",
                          event_type_hat=EVENT_TYPES[self.event_type])


@dataclass
class GroupRollout:
    features: np.ndarray
    truth: tuple
    actions: list
    log_probs: np.ndarray
    rewards: list           # RewardBreakdown per sample
    advantages: np.ndarray = None

    @property
    def totals(self):
        return np.array([r.total for r in self.rewards])


def log_prob(policy, x, action, params=None):
    h = policy.heads(x[None, :], params)
    lp = h["type"][0, action.event_type] + h["dir"][0, action.direction]
    z = h["str_logit"][0]
    lp += _log_sigmoid(z) if action.strong else _log_sigmoid(-z)
    if policy.car_std > 0:
        s = policy.car_std
        lp += -0.5 * ((action.car - h["mu"][0]) / s) ** 2 - np.log(s * np.sqrt(2 * np.pi))
    return float(lp)


def sample_group(policy, x, truth, G, seed, reward_config=None):
    """Draw ``G`` independent actions for one event and score each with the reward model."""
    if G < 2:
        raise ValueError("group size must be >= 2")
    rng = np.random.default_rng(seed)
    pt, pd, ps, mu = policy.probabilities(x)
    pt, pd, ps, mu = pt[0], pd[0], float(ps[0]), float(mu[0])
    actions = []
    for _ in range(G):
        car = mu + policy.car_std * rng.standard_normal() if policy.car_std > 0 else mu
        actions.append(Action(int(rng.choice(N_TYPES, p=pt)), int(rng.choice(len(DIRECTIONS), p=pd)),
                              int(rng.random() < ps), float(car)))
    cfg = reward_config or RewardConfig()
    rewards = [compose_reward(a.prediction(), truth, cfg) for a in actions]
    lps = np.array([log_prob(policy, x, a) for a in actions])
    return GroupRollout(x, truth, actions, lps, rewards)


def group_advantages(rewards, normalize_by_std=True, std_floor=1e-6):
    """Rewards centered on the group mean, optionally over max(population std, floor)."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two rewards per group")
    if std_floor <= 0:
        raise ValueError("std_floor must be > 0")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    a = r - r.mean()
    if normalize_by_std:
        a = a / max(r.std(), std_floor)
    return a


# -- KL and gradients ---------------------------------------------------------

def _cat_kl(logp, logq):
    p = np.exp(logp)
    return np.sum(p * (logp - logq), axis=-1)


def _bern_kl(z, z_ref):
    p, q_log, q1_log = 1.0 / (1.0 + np.exp(-z)), _log_sigmoid(z_ref), _log_sigmoid(-z_ref)
    return p * (_log_sigmoid(z) - q_log) + (1 - p) * (_log_sigmoid(-z) - q1_log)


def kl_to_reference(policy, X, params=None):
    """Per-row KL(pi || pi_ref), summed over heads."""
    X = np.atleast_2d(X)
    h = policy.heads(X, params)
    r = policy.heads(X, policy.reference)
    kl = _cat_kl(h["type"], r["type"]) + _cat_kl(h["dir"], r["dir"]) + _bern_kl(h["str_logit"], r["str_logit"])
    if policy.car_std > 0:
        kl = kl + (h["mu"] - r["mu"]) ** 2 / (2 * policy.car_std ** 2)
    return kl


def _batch(rollouts):
    X = np.vstack([np.repeat(r.features[None, :], len(r.actions), axis=0) for r in rollouts])
    A = np.concatenate([r.advantages / len(r.actions) for r in rollouts]) / len(rollouts)
    acts = [a for r in rollouts for a in r.actions]
    ev = np.vstack([r.features for r in rollouts])
    return X, A, acts, ev


def objective(policy, rollouts, kl_coeff, params=None):
    """mean over events of (mean_i A_i log pi(a_i|x)) - kl_coeff * mean KL."""
    X, A, acts, ev = _batch(rollouts)
    lp = np.array([log_prob(policy, x, a, params) for x, a in zip(X, acts)])
    return float(A @ lp - kl_coeff * kl_to_reference(policy, ev, params).mean())


def gradient(policy, rollouts, kl_coeff, params=None, weights=None):
    """Analytic gradient of :func:`objective`.

    ``weights`` optionally rescales each sample's score term (importance ratios
    with clipped samples set to zero).
    """
    p = params or policy.params()
    X, A, acts, ev = _batch(rollouts)
    if weights is not None:
        A = A * weights
    h = policy.heads(X, p)
    t_idx = np.array([a.event_type for a in acts])
    d_idx = np.array([a.direction for a in acts])
    y_s = np.array([a.strong for a in acts], dtype=float)
    n = len(acts)

    g_type = np.exp(h["type"])
    g_type = -g_type
    g_type[np.arange(n), t_idx] += 1.0
    g_dir = -np.exp(h["dir"])
    g_dir[np.arange(n), d_idx] += 1.0
    g_str = y_s - 1.0 / (1.0 + np.exp(-h["str_logit"]))
    grads = {
        "W_type": (A[:, None] * g_type).T @ X,
        "W_dir": (A[:, None] * g_dir).T @ X,
        "w_str": (A * g_str) @ X,
        "w_car": np.zeros_like(p["w_car"]),
    }
    if policy.car_std > 0:
        car = np.array([a.car for a in acts])
        with np.errstate(invalid="ignore", over="ignore"):
            grads["w_car"] = (A * (car - h["mu"]) * policy.car_scale / policy.car_std ** 2) @ X

    if kl_coeff:
        m = len(ev)
        he, hr = policy.heads(ev, p), policy.heads(ev, policy.reference)
        for key, head in (("type", "W_type"), ("dir", "W_dir")):
            lp, lq = he[key], hr[key]
            pr = np.exp(lp)
            kl = np.sum(pr * (lp - lq), axis=1, keepdims=True)
            dz = pr * (lp - lq - kl)
            grads[head] -= kl_coeff * dz.T @ ev / m
        z, zr = he["str_logit"], hr["str_logit"]
        ps = 1.0 / (1.0 + np.exp(-z))
        dz = ps * (1 - ps) * (z - zr)
        grads["w_str"] -= kl_coeff * dz @ ev / m
        if policy.car_std > 0:
            dmu = (he["mu"] - hr["mu"]) * policy.car_scale / policy.car_std ** 2
            grads["w_car"] -= kl_coeff * dmu @ ev / m

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise PolicyError(f"non-finite gradient in head {name}")
    return grads


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


@dataclass
class StepInfo:
    grad_norm: float
    clipped: bool
    kl: float
    objective: float


def policy_gradient_step(policy, rollouts, learning_rate, kl_coeff, max_grad_norm,
                         ppo_epochs=1, clip_range=0.2):
    """One update on a batch of rollouts (each with ``advantages`` set).

    With ``ppo_epochs > 1`` the score terms are weighted by the importance
    ratio against the sampling policy and zeroed where the clipped surrogate
    is flat.
    """
    if not rollouts:
        raise ValueError("no rollouts")
    for r in rollouts:
        if r.advantages is None:
            raise ValueError("rollout advantages are not set")
    params = policy.params()
    old_lp = np.concatenate([r.log_probs for r in rollouts])
    A_sign = np.concatenate([r.advantages for r in rollouts])
    info = None
    for epoch in range(ppo_epochs):
        weights = None
        if epoch > 0:
            X, _, acts, _ = _batch(rollouts)
            lp = np.array([log_prob(policy, x, a, params) for x, a in zip(X, acts)])
            ratio = np.exp(lp - old_lp)
            flat = ((A_sign > 0) & (ratio > 1 + clip_range)) | ((A_sign < 0) & (ratio < 1 - clip_range))
            weights = np.where(flat, 0.0, ratio)
        grads = gradient(policy, rollouts, kl_coeff, params, weights)
        grads, norm = clip_by_global_norm(grads, max_grad_norm)
        params = {k: params[k] + learning_rate * grads[k] for k in HEADS}
        info = StepInfo(norm, max_grad_norm is not None and norm > max_grad_norm, 0.0, 0.0)
    new = policy.with_params(params)
    ev = np.vstack([r.features for r in rollouts])
    info.kl = float(kl_to_reference(new, ev).mean())
    info.objective = objective(new, rollouts, kl_coeff)
    return new, info


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    iterations: int = 500
    group_size: int = 4
    batch_size: int = 16
    learning_rate: float = 0.5
    kl_coeff: float = 0.05
    max_grad_norm: float = 1.0
    normalize_by_std: bool = True
    std_floor: float = 1e-6
    ppo_epochs: int = 1
    clip_range: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.ppo_epochs < 1:
            raise ValueError("iterations >= 0, batch_size >= 1 and ppo_epochs >= 1 required")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.learning_rate < 0 or self.kl_coeff < 0:
            raise ValueError("learning_rate and kl_coeff must be >= 0")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


def evaluate(policy, events):
    """Greedy-decoding DA and ETA on an event set, plus mean KL to the reference."""
    pt, pd, _, _ = policy.probabilities(events.features)
    pred_dir = [DIRECTIONS[k] for k in np.argmax(pd, axis=1)]
    true_dir = [sign_direction(c) for c in events.cars]
    da = float(np.mean([a == b for a, b in zip(pred_dir, true_dir)]))
    eta = float(np.mean(np.argmax(pt, axis=1) == events.types))
    kl = float(kl_to_reference(policy, events.features).mean())
    return da, eta, kl


def train(env, policy, schedule=None, reward_config=None):
    """Returns ``(policy, trace)``; trace rows are dicts (iteration, mean_reward, da, eta, kl)."""
    schedule = schedule or Schedule()
    cfg = reward_config or RewardConfig()
    rng = np.random.default_rng(schedule.seed)
    if policy.reference is None:
        policy.snapshot_reference()
    trace = []
    for it in range(schedule.iterations):
        picks = rng.integers(0, len(env.train), size=schedule.batch_size)
        seeds = rng.integers(0, 2 ** 63 - 1, size=schedule.batch_size)
        rollouts = []
        for k, s in zip(picks, seeds):
            r = sample_group(policy, env.train.features[k], env.train.truth(k), schedule.group_size, int(s), cfg)
            r.advantages = group_advantages(r.totals, schedule.normalize_by_std, schedule.std_floor)
            rollouts.append(r)
        mean_reward = float(np.mean([r.totals.mean() for r in rollouts]))
        try:
            policy, _ = policy_gradient_step(policy, rollouts, schedule.learning_rate, schedule.kl_coeff,
                                             schedule.max_grad_norm, schedule.ppo_epochs, schedule.clip_range)
        except PolicyError as err:
            raise PolicyError(f"iteration {it}: {err}") from err
        da, eta, kl = evaluate(policy, env.test)
        trace.append({"iteration": it, "mean_reward": mean_reward, "da": da, "eta": eta, "kl": kl})
    return policy, trace


def moving_average(values, window):
    """Trailing moving average; early points average over what is available."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
