"""Recurrent PPO agent that scores variable action sets through afterstates.

Pure numpy. The policy reads the state observation through an embedding
and an LSTM; every legal action is scored by a small MLP on the LSTM state
concatenated with the action's afterstate bits, and a softmax over the legal
list gives the policy. Gradients are written out by hand (BPTT through the
LSTM) and checked against finite differences in the test suite.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import GOAL, ReactionEnv, trace_line
from .molgraph import fnv1a

log = logging.getLogger(__name__)

PARAM_NAMES = ("We", "be", "Wx", "Wh", "bl", "Ush", "Usz", "bs", "vs", "wv", "bv")
CSV_HEADER = ("trajectory", "outcome", "return", "path_len", "best_len")
CKPT_MAGIC = b"SUGARPATH-CKPT 1\n"


class TableOverflow(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PPOConfig:
    embed: int = 64
    hidden: int = 128
    score_hidden: int = 64
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    epochs: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    batch_episodes: int = 32
    minibatches: int = 1
    adv_eps: float = 1e-8
    adv_floor: float = 1.0  # batches with advantage std below this are centered, not scaled up

    def __post_init__(self):
        for name in ("embed", "hidden", "score_hidden", "epochs", "batch_episodes", "minibatches"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ValueError("gamma must be in (0, 1], lam in [0, 1]")


# -- parameters ------------------------------------------------------------


def init_params(n_bits: int, cfg: PPOConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-style init; forget-gate bias 1, zero output layers.

    With the scoring output weights at zero the initial policy is uniform
    over every legal list.
    """
    d, h, k = cfg.embed, cfg.hidden, cfg.score_hidden

    def glorot(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols))

    bl = np.zeros(4 * h)
    bl[h : 2 * h] = 1.0  # forget gate
    return {
        "We": glorot(d, n_bits + 1),
        "be": np.zeros(d),
        "Wx": glorot(4 * h, d),
        "Wh": glorot(4 * h, h),
        "bl": bl,
        "Ush": glorot(k, h),
        "Usz": glorot(k, n_bits),
        "bs": np.zeros(k),
        "vs": np.zeros(k),
        "wv": np.zeros(h),
        "bv": np.zeros(1),
    }


def n_bits_of(params) -> int:
    return params["Usz"].shape[1]


def flatten(params) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in PARAM_NAMES])


def unflatten(vec: np.ndarray, like) -> dict[str, np.ndarray]:
    out, i = {}, 0
    for k in PARAM_NAMES:
        n = like[k].size
        out[k] = vec[i : i + n].reshape(like[k].shape).copy()
        i += n
    return out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(params, e, h, c):
    hid = h.shape[-1]
    g = e @ params["Wx"].T + h @ params["Wh"].T + params["bl"]
    i = _sigmoid(g[..., :hid])
    f = _sigmoid(g[..., hid : 2 * hid])
    o = _sigmoid(g[..., 2 * hid : 3 * hid])
    gg = np.tanh(g[..., 3 * hid :])
    c2 = f * c + i * gg
    tc = np.tanh(c2)
    return o * tc, c2, (i, f, o, gg, tc)


def policy_step(params, obs: np.ndarray, h: np.ndarray, c: np.ndarray, Z: np.ndarray):
    """One recurrent step for a single episode.

    ``obs`` is the flattened observation, ``Z`` holds one afterstate bit row
    per legal action. Returns (log-probs, value, h, c).
    """
    e = np.tanh(params["We"] @ obs + params["be"])
    h, c, _ = lstm_cell(params, e, h, c)
    u = np.tanh(params["Ush"] @ h + Z @ params["Usz"].T + params["bs"])
    s = u @ params["vs"]
    s = s - s.max()
    logp = s - np.log(np.exp(s).sum())
    value = float(params["wv"] @ h + params["bv"][0])
    return logp, value, h, c


# -- rollouts --------------------------------------------------------------


@dataclass
class Trajectory:
    obs: list[np.ndarray] = field(default_factory=list)
    Z: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    logp: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    outcome: str = "running"

    def __len__(self):
        return len(self.actions)

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))


class _StateCache:
    """Per-state legal lists and afterstate matrices (the env is deterministic)."""

    def __init__(self, env: ReactionEnv):
        self.env = env
        self._z: dict = {}

    def afterstates(self, state) -> np.ndarray:
        Z = self._z.get(state.key)
        if Z is None:
            legal = self.env.legal_actions(state)
            Z = np.array([self.env.afterstate_bits(state, a) for a in legal], dtype=float)
            Z.setflags(write=False)
            self._z[state.key] = Z
        return Z


def collect_rollouts(env: ReactionEnv, params, n: int, rng: np.random.Generator,
                     cache: _StateCache | None = None) -> list[Trajectory]:
    """Run ``n`` episodes with the stochastic policy, stepping them in lockstep."""
    cache = cache or _StateCache(env)
    hid = params["Wh"].shape[1]
    trajs = [Trajectory() for _ in range(n)]
    states, obs = [], []
    for tr in trajs:
        s, o, _ = env.reset()
        states.append(s)
        obs.append(o.vector())
        if s.done:
            tr.outcome = s.outcome
    H = np.zeros((n, hid))
    C = np.zeros((n, hid))
    active = [i for i in range(n) if not states[i].done]
    while active:
        X = np.array([obs[i] for i in active])
        E = np.tanh(X @ params["We"].T + params["be"])
        Hn, Cn, _ = lstm_cell(params, E, H[active], C[active])
        H[active], C[active] = Hn, Cn
        V = Hn @ params["wv"] + params["bv"][0]
        Hs = Hn @ params["Ush"].T + params["bs"]
        still = []
        for row, i in enumerate(active):
            Z = cache.afterstates(states[i])
            u = np.tanh(Hs[row] + Z @ params["Usz"].T)
            s = u @ params["vs"]
            s = s - s.max()
            logp = s - np.log(np.exp(s).sum())
            a = int(rng.choice(len(logp), p=np.exp(logp)))
            tr = trajs[i]
            tr.obs.append(obs[i])
            tr.Z.append(Z)
            tr.actions.append(a)
            tr.logp.append(float(logp[a]))
            tr.values.append(float(V[row]))
            st, o, r, done = env.step(states[i], a)
            tr.rewards.append(r)
            states[i] = st
            obs[i] = o.vector()
            if done:
                tr.outcome = st.outcome
            else:
                still.append(i)
        active = still
    return trajs


def compute_gae(rewards: Sequence[float], values: Sequence[float], gamma: float, lam: float,
                last_value: float = 0.0):
    """Generalized advantage estimates and returns for one terminated episode."""
    T = len(rewards)
    adv = np.zeros(T)
    v = np.append(np.asarray(values, dtype=float), last_value)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * v[t + 1] - v[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v[:-1]


# -- batched forward/backward -----------------------------------------------


@dataclass
class Batch:
    X: np.ndarray  # (B, T, n_bits+1)
    mask: np.ndarray  # (B, T)
    Z: np.ndarray  # (N_act, n_bits), rows grouped by step
    seg: np.ndarray  # (N_act,) flattened step index b*T+t
    starts: np.ndarray  # first action row of every valid step, in step order
    steps: np.ndarray  # flattened step index of every valid step
    chosen: np.ndarray  # action row chosen at every valid step
    old_logp: np.ndarray
    adv: np.ndarray
    ret: np.ndarray


def make_batch(trajs: Sequence[Trajectory], adv: Sequence[np.ndarray], ret: Sequence[np.ndarray]) -> Batch:
    trajs = [t for t in trajs if len(t)]
    B = len(trajs)
    T = max(len(t) for t in trajs)
    nin = trajs[0].obs[0].shape[0]
    X = np.zeros((B, T, nin))
    mask = np.zeros((B, T))
    Zs, seg, starts, steps, chosen = [], [], [], [], []
    old = []
    row = 0
    for b, tr in enumerate(trajs):
        for t in range(len(tr)):
            X[b, t] = tr.obs[t]
            mask[b, t] = 1.0
            k = tr.Z[t].shape[0]
            Zs.append(tr.Z[t])
            seg.extend([b * T + t] * k)
            starts.append(row)
            steps.append(b * T + t)
            chosen.append(row + tr.actions[t])
            row += k
        old.extend(tr.logp)
    return Batch(X, mask, np.vstack(Zs), np.array(seg), np.array(starts), np.array(steps),
                 np.array(chosen), np.array(old), np.concatenate(adv), np.concatenate(ret))


def _segment_logsoftmax(s, starts):
    mx = np.maximum.reduceat(s, starts)
    counts = np.diff(np.append(starts, s.shape[0]))
    shifted = s - np.repeat(mx, counts)
    ex = np.exp(shifted)
    lse = np.log(np.add.reduceat(ex, starts))
    return shifted - np.repeat(lse, counts), counts


def loss_and_grad(params, batch: Batch, cfg: PPOConfig, need_grad: bool = True):
    """Clipped PPO loss over a batch of episodes and its exact gradient.

    loss = mean(-min(r A, clip(r) A)) + value_coef * mean((V - R)^2)
           - entropy_coef * mean(entropy), means over valid steps.
    """
    B, T, _ = batch.X.shape
    hid = params["Wh"].shape[1]
    E = np.tanh(batch.X @ params["We"].T + params["be"])  # (B, T, d)
    Hs = np.zeros((B, T, hid))
    h = np.zeros((B, hid))
    c = np.zeros((B, hid))
    caches = []
    for t in range(T):
        c_prev, h_prev = c, h
        h, c, gates = lstm_cell(params, E[:, t], h, c)
        caches.append((h_prev, c_prev, gates))
        Hs[:, t] = h
    Hflat = Hs.reshape(B * T, hid)
    Hv = Hflat[batch.steps]  # (N, hid), valid steps in order
    V = Hv @ params["wv"] + params["bv"][0]
    Pre = (Hflat @ params["Ush"].T)[batch.seg] + batch.Z @ params["Usz"].T + params["bs"]
    U = np.tanh(Pre)
    S = U @ params["vs"]
    logp_all, counts = _segment_logsoftmax(S, batch.starts)
    P = np.exp(logp_all)
    logp = logp_all[batch.chosen]
    ent = -np.add.reduceat(P * logp_all, batch.starts)
    N = len(batch.steps)
    ratio = np.exp(logp - batch.old_logp)
    A = batch.adv
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * A
    pol = -np.minimum(surr1, surr2)
    vloss = (V - batch.ret) ** 2
    loss = pol.mean() + cfg.value_coef * vloss.mean() - cfg.entropy_coef * ent.mean()
    info = {
        "loss": float(loss),
        "policy": float(pol.mean()),
        "value": float(vloss.mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip)),
        "approx_kl": float(np.mean(batch.old_logp - logp)),
    }
    if not need_grad:
        return loss, None, info

    # d loss / d logp_chosen (the clipped branch has zero gradient)
    dlogp = np.where(surr1 <= surr2, -A * ratio, 0.0) / N
    dent = -cfg.entropy_coef / N
    rep = np.repeat
    dS = -P * rep(dlogp, counts)
    dS[batch.chosen] += dlogp
    dS += dent * (-P * (logp_all + rep(ent, counts)))
    dV = cfg.value_coef * 2.0 * (V - batch.ret) / N

    g = {k: np.zeros_like(v) for k, v in params.items()}
    g["vs"] = U.T @ dS
    dPre = np.outer(dS, params["vs"]) * (1 - U * U)
    g["Usz"] = dPre.T @ batch.Z
    g["bs"] = dPre.sum(0)
    dHs_seg = np.zeros((B * T, dPre.shape[1]))
    np.add.at(dHs_seg, batch.seg, dPre)
    g["Ush"] = dHs_seg.T @ Hflat
    dH = dHs_seg @ params["Ush"]
    g["wv"] = dV @ Hv
    g["bv"][0] = dV.sum()
    dH[batch.steps] += np.outer(dV, params["wv"])
    dH = dH.reshape(B, T, hid)

    dE = np.zeros_like(E)
    dh_next = np.zeros((B, hid))
    dc_next = np.zeros((B, hid))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, (i, f, o, gg, tc) = caches[t]
        dh = dH[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc * tc) + dc_next
        di = dc * gg
        df = dc * c_prev
        dgg = dc * i
        dG = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dgg * (1 - gg * gg)], axis=1
        )
        g["Wx"] += dG.T @ E[:, t]
        g["Wh"] += dG.T @ h_prev
        g["bl"] += dG.sum(0)
        dE[:, t] = dG @ params["Wx"]
        dh_next = dG @ params["Wh"]
        dc_next = dc * f
    dEpre = (dE * (1 - E * E)).reshape(B * T, -1)
    g["We"] = dEpre.T @ batch.X.reshape(B * T, -1)
    g["be"] = dEpre.sum(0)
    return loss, g, info


# -- optimisation --------------------------------------------------------


class Adam:
    def __init__(self, params, lr=3e-4, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        a = self.lr * np.sqrt(1 - self.b2**self.t) / (1 - self.b1**self.t)
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            params[k] -= a * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


def clip_grads(grads, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def ppo_update(params, opt: Adam, trajs: Sequence[Trajectory], cfg: PPOConfig,
               rng: np.random.Generator) -> dict:
    """Several epochs of clipped-surrogate updates on one batch of episodes."""
    trajs = [t for t in trajs if len(t)]
    if not trajs:
        return {}
    advs, rets = [], []
    for tr in trajs:
        a, r = compute_gae(tr.rewards, tr.values, cfg.gamma, cfg.lam)
        advs.append(a)
        rets.append(r)
    flat = np.concatenate(advs)
    mu, sd = flat.mean(), flat.std()
    # with no goal in the batch the advantages are pure value-fit noise;
    # dividing by their own tiny std would turn that noise into unit-size updates
    scale = max(sd, cfg.adv_floor) + cfg.adv_eps
    advs = [(a - mu) / scale for a in advs]
    info = {}
    for _ in range(cfg.epochs):
        order = rng.permutation(len(trajs))
        for chunk in np.array_split(order, min(cfg.minibatches, len(trajs))):
            batch = make_batch([trajs[i] for i in chunk], [advs[i] for i in chunk], [rets[i] for i in chunk])
            _, grads, info = loss_and_grad(params, batch, cfg)
            info["grad_norm"] = clip_grads(grads, cfg.max_grad_norm)
            opt.step(params, grads)
    return info


# -- training loop ---------------------------------------------------------


@dataclass
class LogRow:
    trajectory: int
    outcome: str
    ret: float
    path_len: int | None
    best_len: int | None


@dataclass
class TrainResult:
    params: dict
    log: list[LogRow]
    best_len: int | None
    best_actions: list[int]
    trajectories: int
    seconds: float
    config: PPOConfig
    seed: int

    def csv_text(self) -> str:
        return convergence_csv(self.log)


def convergence_csv(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.trajectory, r.outcome, f"{r.ret:.6g}",
                    "" if r.path_len is None else r.path_len,
                    "" if r.best_len is None else r.best_len])
    return buf.getvalue()


def read_convergence_csv(text: str) -> list[LogRow]:
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected convergence header {header}")
    for rec in reader:
        if not rec:
            continue
        t, outcome, ret, pl, bl = rec
        rows.append(LogRow(int(t), outcome, float(ret), int(pl) if pl else None, int(bl) if bl else None))
    return rows


def train(
    env: ReactionEnv,
    budget: int = 50_000,
    seed: int = 0,
    cfg: PPOConfig | None = None,
    stop: Callable[["TrainResult"], bool] | None = None,
    check_every: int = 10,
    params=None,
) -> TrainResult:
    """Train for at most ``budget`` trajectories.

    ``stop`` is consulted every ``check_every`` updates with the partial
    result; returning True ends training early.
    """
    cfg = cfg or PPOConfig()
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(env.config.n_bits, cfg, rng)
    opt = Adam(params, lr=cfg.lr)
    cache = _StateCache(env)
    rows: list[LogRow] = []
    best: int | None = None
    best_actions: list[int] = []
    done_traj = 0
    t0 = time.perf_counter()
    result = TrainResult(params, rows, None, [], 0, 0.0, cfg, seed)
    update = 0
    while done_traj < budget:
        n = min(cfg.batch_episodes, budget - done_traj)
        trajs = collect_rollouts(env, params, n, rng, cache)
        for tr in trajs:
            done_traj += 1
            plen = len(tr) if tr.outcome == GOAL else None
            if plen is not None and (best is None or plen < best):
                best, best_actions = plen, list(tr.actions)
            rows.append(LogRow(done_traj, tr.outcome, tr.ret, plen, best))
        info = ppo_update(params, opt, trajs, cfg, rng)
        update += 1
        result.best_len, result.best_actions = best, best_actions
        result.trajectories, result.seconds = done_traj, time.perf_counter() - t0
        if update % 50 == 0:
            recent = rows[-50 * cfg.batch_episodes :]
            rate = sum(r.outcome == GOAL for r in recent) / max(len(recent), 1)
            log.info("seed %d traj %d best %s goal-rate %.3f entropy %.3f", seed, done_traj, best,
                     rate, info.get("entropy", float("nan")))
        if stop is not None and update % check_every == 0 and stop(result):
            break
    return result


def greedy_rollout(env: ReactionEnv, params):
    """Follow the argmax action (lowest index on ties). Returns (final state, actions, trace)."""
    state, obs, _ = env.reset()
    hid = params["Wh"].shape[1]
    h, c = np.zeros(hid), np.zeros(hid)
    actions, trace = [], []
    while not state.done:
        legal = env.legal_actions(state)
        Z = np.array([env.afterstate_bits(state, a) for a in legal], dtype=float)
        logp, _, h, c = policy_step(params, obs.vector(), h, c, Z)
        a = int(np.argmax(logp))  # argmax returns the first maximum
        state, obs, r, _ = env.step(state, a)
        actions.append(a)
        trace.append(trace_line(state.t, legal[a], r))
    return state, actions, trace


def greedy_converged(env: ReactionEnv, target_len: int) -> Callable[[TrainResult], bool]:
    """Stop rule: best length found equals ``target_len`` and the greedy policy follows it."""

    def stop(res: TrainResult) -> bool:
        if res.best_len != target_len:
            return False
        final, actions, _ = greedy_rollout(env, res.params)
        return final.outcome == GOAL and len(actions) == target_len

    return stop


# -- tabular baseline ------------------------------------------------------


def tabular_q(env: ReactionEnv, episodes: int = 5000, seed: int = 0, alpha: float = 0.5,
              gamma: float = 0.99, epsilon: float = 0.2,
              max_states: int = 200_000) -> tuple[dict, list[LogRow]]:
    """Epsilon-greedy one-step Q-learning over exact state keys.

    Only usable because the state graph is small; serves as a sanity
    baseline for the recurrent agent. Raises TableOverflow once the table
    holds more than ``max_states`` entries.
    """
    rng = np.random.default_rng(seed)
    Q: dict = {}
    rows, best = [], None
    for ep in range(1, episodes + 1):
        state, _, legal = env.reset()
        ret, steps = 0.0, 0
        while not state.done:
            q = Q.setdefault((state.key, state.t), np.zeros(len(legal)))
            if len(Q) > max_states:
                raise TableOverflow(f"Q table exceeds {max_states} states")
            if rng.random() < epsilon:
                a = int(rng.integers(len(legal)))
            else:
                a = int(np.argmax(q))
            nxt, _, r, done = env.step(state, a)
            target = r
            if not done:
                legal = env.legal_actions(nxt)
                qn = Q.setdefault((nxt.key, nxt.t), np.zeros(len(legal)))
                target += gamma * qn.max()
            q[a] += alpha * (target - q[a])
            state, ret, steps = nxt, ret + r, steps + 1
        plen = steps if state.outcome == GOAL else None
        if plen is not None and (best is None or plen < best):
            best = plen
        rows.append(LogRow(ep, state.outcome, ret, plen, best))
    return Q, rows


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(params, path: str | Path, cfg: PPOConfig | None = None, meta: dict | None = None) -> None:
    """Binary checkpoint: text header with shapes, float64 LE payload, FNV-1a trailer."""
    lines = [CKPT_MAGIC.decode().rstrip("\n")]
    for k in PARAM_NAMES:
        lines.append(f"P {k} " + " ".join(map(str, params[k].shape)))
    if cfg is not None:
        lines.append("C " + " ".join(f"{k}={v}" for k, v in asdict(cfg).items()))
    for k, v in (meta or {}).items():
        lines.append(f"M {k}={v}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode()
    payload = b"".join(np.ascontiguousarray(params[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    body = header + payload
    data = body + f"{fnv1a(body):016x}".encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path: str | Path):
    """Returns (params, PPOConfig or None, meta). Raises CheckpointError on any corruption."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    if not data.startswith(CKPT_MAGIC) or len(data) < 16:
        raise CheckpointError("not a checkpoint file")
    body, trailer = data[:-16], data[-16:]
    if trailer.decode(errors="replace") != f"{fnv1a(body):016x}":
        raise CheckpointError("checksum mismatch")
    end = body.find(b"\nEND\n")
    if end < 0:
        raise CheckpointError("header not terminated")
    header = body[: end + 1].decode().splitlines()[1:]
    payload = body[end + 5 :]
    shapes, cfg, meta = {}, None, {}
    for line in header:
        tag, _, rest = line.partition(" ")
        if tag == "P":
            name, *dims = rest.split()
            shapes[name] = tuple(int(d) for d in dims)
        elif tag == "C":
            kw = dict(item.split("=", 1) for item in rest.split())
            types = {f.name: f.type for f in fields(PPOConfig)}
            cfg = PPOConfig(**{k: (int(v) if types[k] in (int, "int") else float(v)) for k, v in kw.items()})
        elif tag == "M":
            k, _, v = rest.partition("=")
            meta[k] = v
    if set(shapes) != set(PARAM_NAMES):
        raise CheckpointError("parameter list incomplete")
    params, i = {}, 0
    for k in PARAM_NAMES:
        n = int(np.prod(shapes[k]))
        if i + 8 * n > len(payload):
            raise CheckpointError("payload truncated")
        params[k] = np.frombuffer(payload, dtype="<f8", count=n, offset=i).reshape(shapes[k]).copy()
        i += 8 * n
    if i != len(payload):
        raise CheckpointError("payload length mismatch")
    return params, cfg, meta
