"""Independent reference computations for the test-suite.

Everything here works on raw numpy arrays (transition P[s, a, t], reward
R[s, a], discount gamma, terminal set) and shares no code with the package.
"""

from __future__ import annotations

import itertools

import numpy as np


def mixture(P, R, pi):
    return np.einsum("sa,sat->st", pi, P), (pi * R).sum(axis=1)


def linear_value(P_pi, r_pi, gamma):
    return np.linalg.solve(np.eye(len(r_pi)) - gamma * P_pi, r_pi)


def switch_set_value(P, R, gamma, pi_q, pi_d, cost, switch_set, terminals=()):
    """Exact value of following DEEPTHINK on ``switch_set`` (paying ``cost``) and QUICK elsewhere."""
    S = P.shape[0]
    g = np.zeros(S, dtype=bool)
    g[list(switch_set)] = True
    g[list(terminals)] = False
    pi = np.where(g[:, None], pi_d, pi_q)
    P_pi, r_pi = mixture(P, R, pi)
    return linear_value(P_pi, r_pi - cost * g, gamma)


def enumerate_switch_sets(P, R, gamma, pi_q, pi_d, cost, terminals=()):
    """Brute force over all 2^|S| stationary switch sets.

    Returns (v, g): the pointwise-best value and the smallest set attaining it.
    """
    S = P.shape[0]
    free = [s for s in range(S) if s not in set(terminals)]
    best_v, best_g = None, None
    candidates = []
    for r in range(len(free) + 1):
        for subset in itertools.combinations(free, r):
            v = switch_set_value(P, R, gamma, pi_q, pi_d, cost, subset, terminals)
            candidates.append((subset, v))
            best_v = v if best_v is None else np.maximum(best_v, v)
    for subset, v in candidates:  # ordered by size, so the first hit is the smallest
        if np.all(v >= best_v - 1e-9):
            best_g = np.zeros(S, dtype=int)
            best_g[list(subset)] = 1
            break
    return best_v, best_g


def optimal_values(P, R, gamma, tol=1e-12):
    v = np.zeros(P.shape[0])
    while True:
        tv = (R + gamma * P @ v).max(axis=1)
        if np.max(np.abs(tv - v)) < tol:
            return tv
        v = tv


def budgeted_policy_iteration(P, R, gamma, pi_q, pi_d, n, cost, penalty, terminals=()):
    """Exact budgeted optimum by policy iteration on a hand-built (state, remaining) model.

    Returns (v, g) with shape (S, n + 2); column j is remaining budget j - 1.
    Ties keep QUICK.
    """
    S = P.shape[0]
    L = n + 2
    Pq, rq = mixture(P, R, pi_q)
    Pd, rd = mixture(P, R, pi_d)
    X = S * L
    T = np.zeros((2, X, X))
    Rw = np.zeros((2, X))
    term = set(terminals)
    for s in range(S):
        for j in range(L):
            k = j - 1
            x = s * L + j
            if s in term:
                T[:, x, x] = 1.0
                continue
            for g in (0, 1):
                k2 = max(k - g, -1)
                for t in range(S):
                    T[g, x, t * L + k2 + 1] += (Pd if g else Pq)[s, t]
                Rw[g, x] = (rd if g else rq)[s] - cost * g - (penalty if k2 < 0 else 0.0)
    pol = np.zeros(X, dtype=int)
    while True:
        Tp = T[pol, np.arange(X)]
        rp = Rw[pol, np.arange(X)]
        v = np.linalg.solve(np.eye(X) - gamma * Tp, rp)
        q = Rw + gamma * T @ v  # (2, X)
        new = (q[1] - q[0] > 1e-9).astype(int)
        if np.array_equal(new, pol):
            break
        pol = new
    return v.reshape(S, L), pol.reshape(S, L)


def monte_carlo_switched(P, R, gamma, pi_q, pi_d, g, p, cost, start, episodes, horizon, rng,
                         terminals=()):
    """Sampled discounted returns of the switched process with persistence.

    Episodes run side by side; the switch starts off. Returns the per-episode
    returns so callers can form standard errors.
    """
    S, A = R.shape
    g = np.asarray(g, dtype=bool)
    done_state = np.zeros(S, dtype=bool)
    done_state[list(terminals)] = True
    cdf_q, cdf_d = np.cumsum(pi_q, axis=1), np.cumsum(pi_d, axis=1)
    cdf_p = np.cumsum(P, axis=2)
    s = np.full(episodes, start)
    m = np.zeros(episodes, dtype=bool)
    ret = np.zeros(episodes)
    disc = 1.0
    for _ in range(horizon):
        alive = ~done_state[s]
        if not alive.any():
            break
        persist = m & (rng.random(episodes) < p)
        consulted_on = ~persist & g[s]
        deep = persist | consulted_on
        cdf = np.where(deep[:, None], cdf_d[s], cdf_q[s])
        a = np.minimum((rng.random(episodes)[:, None] > cdf).sum(axis=1), A - 1)
        ret += alive * disc * (R[s, a] - cost * consulted_on)
        nxt = np.minimum((rng.random(episodes)[:, None] > cdf_p[s, a]).sum(axis=1), S - 1)
        s = np.where(alive, nxt, s)
        m = deep
        disc *= gamma
    return ret


def random_instance(rng, S, A, gamma=0.9, terminal=False):
    """Random dense MDP plus two random stochastic policies."""
    P = rng.random((S, A, S)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, (S, A))
    terminals = ()
    if terminal:
        P[S - 1] = 0.0
        P[S - 1, :, S - 1] = 1.0
        R[S - 1] = 0.0
        terminals = (S - 1,)
    pi_q = rng.dirichlet(np.ones(A), size=S)
    pi_d = rng.dirichlet(np.ones(A), size=S)
    return P, R, gamma, pi_q, pi_d, terminals


CHAIN3_COST = 0.1


def chain3_expected_text(data_dir) -> str:
    """Expected solution for the bundled 3-state chain, from set enumeration."""
    import json
    from pathlib import Path

    spec = json.loads((Path(data_dir) / "chain3.json").read_text())
    P, R, gamma, terminals = load_raw_mdp(Path(data_dir) / spec["path"])
    v_opt = optimal_values(P, R, gamma)
    greedy = np.zeros(R.shape)
    greedy[np.arange(len(R)), (R + gamma * P @ v_opt).argmax(axis=1)] = 1.0

    def skilled(eps):
        return (1 - eps) * greedy + eps / R.shape[1]

    v, g = enumerate_switch_sets(P, R, gamma, skilled(spec["quick_epsilon"]),
                                 skilled(spec["deep_epsilon"]), CHAIN3_COST, terminals)
    lines = ["# londi-switch-solution v1", f"# cost {CHAIN3_COST!r}", "state v branch g"]
    for s in range(len(v)):
        lines.append(f"{s} {float(v[s])!r} {'deep' if g[s] else 'quick'} {int(g[s])}")
    return "\n".join(lines) + "\n"


def load_raw_mdp(path):
    """Minimal reader for the londi-mdp text format."""
    S = A = gamma = None
    terminals = ()
    entries_t, entries_r = [], []
    for line in open(path):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "states":
            S = int(parts[1])
        elif parts[0] == "actions":
            A = int(parts[1])
        elif parts[0] == "gamma":
            gamma = float(parts[1])
        elif parts[0] == "terminal":
            terminals = tuple(int(x) for x in parts[1:])
        elif parts[0] == "T":
            entries_t.append(parts[1:])
        elif parts[0] == "R":
            entries_r.append(parts[1:])
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s, a, t, p in entries_t:
        P[int(s), int(a), int(t)] = float(p)
    for s, a, r in entries_r:
        R[int(s), int(a)] = float(r)
    return P, R, gamma, terminals


if __name__ == "__main__":
    import sys
    from pathlib import Path

    data = Path(__file__).resolve().parents[1] / "src" / "londi" / "data"
    (data / "chain3_expected.txt").write_text(chain3_expected_text(data))
    sys.exit(0)
