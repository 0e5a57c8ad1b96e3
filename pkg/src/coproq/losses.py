"""Training objectives: label margin loss, 1-step and N-step TD on proxy
rewards, pseudo-label margin, the combined propagation objective, and the
intervention-style (PVP) label loss.

Scalar ops here are the readable reference contracts; prop_step is the
vectorized implementation the trainer actually runs (one fused forward and
backward over the stacked env + label minibatch). combined_prop_loss wires
prop_step to a freshly computed target so both paths share one code body.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels, qnet
from .exceptions import UsageError

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    margin: float = 0.05
    pseudo_weight: float = 0.5
    gamma: float = 0.99
    n_step: int = 20


def margin_loss(q_row: np.ndarray, label_action: int,
                margin: float = 0.05) -> float:
    """max_a [q(a) + l(label,a)] - q(label) with l = 0 at the label else C."""
    q_row = np.asarray(q_row, dtype=np.float64)
    adjusted = q_row + margin
    adjusted[label_action] = q_row[label_action]
    return float(adjusted.max() - q_row[label_action])


def td1_loss(transition, q: qnet.QFunction, tgt: qnet.QFunction,
             gamma: float = 0.99) -> float:
    pred = qnet.q_values(q, transition.state)[transition.action]
    boot = 0.0 if transition.done else gamma * float(
        qnet.q_values(tgt, transition.next_state).max())
    return float((pred - (transition.reward + boot)) ** 2)


def tdn_loss(window, q: qnet.QFunction, tgt: qnet.QFunction,
             gamma: float = 0.99, n: int = 20) -> float:
    """Squared error against the n-step return from the window's first
    transition. The window holds up to n contiguous transitions; a terminal
    anywhere but the last slot is a usage error, a terminal last slot
    bootstraps 0, and a shorter-than-n window (rollout cut) bootstraps from
    the last stored next state.
    """
    if not window:
        raise UsageError("empty n-step window")
    if len(window) > n:
        raise UsageError(f"window of {len(window)} transitions for n={n}")
    for a, b in zip(window[:-1], window[1:]):
        if a.done:
            raise UsageError("n-step window crosses an episode boundary")
        if b.episode_id != a.episode_id or b.t != a.t + 1:
            raise UsageError("n-step window is not contiguous")
    ret = 0.0
    for k, tr in enumerate(window):
        ret += (gamma ** k) * tr.reward
    last = window[-1]
    if not last.done:
        boot = float(qnet.q_values(tgt, last.next_state).max())
        ret += (gamma ** len(window)) * boot
    first = window[0]
    pred = qnet.q_values(q, first.state)[first.action]
    return float((pred - ret) ** 2)


def pseudo_margin_loss(q_row: np.ndarray, tgt_row: np.ndarray,
                       margin: float = 0.05) -> float:
    """Margin loss against the target network's greedy action (ties break
    toward the lowest index). Callers must filter out labeled states."""
    return margin_loss(q_row, int(np.argmax(tgt_row)), margin)


def pvp_loss(record, q: qnet.QFunction) -> float:
    """(Q(s, a^L) - 1)^2 + (Q(s, a) + 1)^2, applied verbatim even when the
    executed action equals the label (contradictory targets, see trainer log).
    """
    row = qnet.q_values(q, record.state)
    return float((row[record.label_action] - 1.0) ** 2
                 + (row[record.executed_action] + 1.0) ** 2)


def label_accuracy(q: qnet.QFunction, obs: np.ndarray,
                   labels: np.ndarray) -> float:
    """P[argmax Q(s,.) == a^L] over the given label set."""
    if len(labels) == 0:
        raise UsageError("accuracy over an empty label set")
    pred = np.argmax(qnet.q_values_batch(q, obs), axis=1)
    return float(np.mean(pred == labels))


def _margin_rows(Q: np.ndarray, labels: np.ndarray, margin: float):
    """Per-row margin loss values and the maximizing action index."""
    rows = np.arange(Q.shape[0])
    adjusted = Q + margin
    adjusted[rows, labels] = Q[rows, labels]
    j = np.argmax(adjusted, axis=1)
    return adjusted[rows, j] - Q[rows, labels], j


def margin_align_step(q: qnet.QFunction, obs: np.ndarray, labels: np.ndarray,
                      margin: float):
    """Mean margin loss over one label minibatch plus its flat gradient."""
    Q, cache = kernels.q_forward_cached(q.layout, q.params, obs)
    vals, j = _margin_rows(Q, labels, margin)
    n = len(labels)
    dQ = np.zeros_like(Q)
    rows = np.arange(n)
    np.add.at(dQ, (rows, j), 1.0 / n)
    np.add.at(dQ, (rows, labels), -1.0 / n)
    grads = kernels.q_backward(q.layout, q.params, cache, dQ)
    return float(vals.mean()), grads


def prop_step(q: qnet.QFunction, env_mb, label_mb, weights: LossWeights,
              td1_boot_max: np.ndarray, nstep_boot_max: np.ndarray,
              pseudo_actions=None, label_term: str = "margin"):
    """One propagation-phase update: fused forward/backward over the stacked
    env and label rows.

    td1_boot_max / nstep_boot_max / pseudo_actions are target-network
    columns for the env minibatch, precomputed by the caller (the target is
    frozen within an epoch, so the trainer caches them in bulk).

    Returns (total loss, flat gradient, per-term means). Term means are
    unweighted; the total applies the mixing coefficients.
    """
    B = env_mb.obs.shape[0]
    has_labels = label_mb is not None and len(label_mb.labels) > 0
    if not has_labels:
        log.debug("empty label buffer: label term contributes 0")
        rows = env_mb.obs
    else:
        rows = np.vstack([env_mb.obs, label_mb.obs])

    Q, cache = kernels.q_forward_cached(q.layout, q.params, rows)
    dQ = np.zeros_like(Q)
    Qenv = Q[:B]
    ar = np.arange(B)
    pred = Qenv[ar, env_mb.actions]

    # 1-step TD
    target1 = env_mb.rewards + weights.gamma * td1_boot_max * ~env_mb.dones
    d1 = pred - target1
    loss_td1 = float(np.mean(d1 * d1))

    # n-step TD (returns and gamma^n precomputed per window row)
    targetn = env_mb.nstep_return + env_mb.nstep_gamma * nstep_boot_max
    dn = pred - targetn
    loss_tdn = float(np.mean(dn * dn))

    np.add.at(dQ[:B], (ar, env_mb.actions), (2.0 / B) * (d1 + dn))

    pseudo_w = weights.pseudo_weight if (
        label_term == "margin" and pseudo_actions is not None) else 0.0

    loss_lab = 0.0
    if has_labels:
        L = len(label_mb.labels)
        Qlab = Q[B:]
        rl = np.arange(L)
        if label_term == "margin":
            vals, j = _margin_rows(Qlab, label_mb.labels, weights.margin)
            loss_lab = float(vals.mean())
            coeff = (1.0 - pseudo_w) / L
            np.add.at(dQ[B:], (rl, j), coeff)
            np.add.at(dQ[B:], (rl, label_mb.labels), -coeff)
        elif label_term == "pvp":
            dl = Qlab[rl, label_mb.labels] - 1.0
            de = Qlab[rl, label_mb.executed] + 1.0
            loss_lab = float(np.mean(dl * dl + de * de))
            np.add.at(dQ[B:], (rl, label_mb.labels), (2.0 / L) * dl)
            np.add.at(dQ[B:], (rl, label_mb.executed), (2.0 / L) * de)
        else:
            raise UsageError(f"unknown label term {label_term!r}")

    loss_pseudo = 0.0
    if pseudo_w > 0.0:
        unl = np.where(~env_mb.labeled)[0]
        if unl.size:
            vals, j = _margin_rows(Qenv[unl], pseudo_actions[unl],
                                   weights.margin)
            loss_pseudo = float(vals.mean())
            coeff = pseudo_w / unl.size
            np.add.at(dQ[:B], (unl, j), coeff)
            np.add.at(dQ[:B], (unl, pseudo_actions[unl]), -coeff)

    label_coeff = 1.0 if label_term == "pvp" else (1.0 - pseudo_w)
    total = (loss_td1 + loss_tdn + label_coeff * loss_lab
             + pseudo_w * loss_pseudo)
    grads = kernels.q_backward(q.layout, q.params, cache, dQ)
    parts = {"td1": loss_td1, "tdn": loss_tdn,
             "mg_label": loss_lab, "mg_tgt": loss_pseudo}
    return total, grads, parts


def target_columns(tgt: qnet.QFunction, env_mb):
    """Target-network columns for one env minibatch: max Q^TGT(s'), max
    Q^TGT at the n-step bootstrap state, and argmax Q^TGT(s)."""
    td1_boot = qnet.q_values_batch(tgt, env_mb.next_obs).max(axis=1)
    tq_obs = qnet.q_values_batch(tgt, env_mb.obs)
    nstep_boot = np.zeros(len(env_mb.actions))
    live = env_mb.nstep_gamma > 0.0
    if np.any(live):
        nstep_boot[live] = qnet.q_values_batch(
            tgt, env_mb.nstep_boot_obs[live]).max(axis=1)
    return td1_boot, nstep_boot, np.argmax(tq_obs, axis=1)


def combined_prop_loss(env_mb, label_mb, q: qnet.QFunction,
                       tgt: qnet.QFunction, weights: LossWeights):
    """Full combined objective with the target evaluated in place:
    L = mean td1 + mean tdN + (1 - w)·mean label margin + w·mean pseudo
    margin over unlabeled env states.
    """
    td1_boot, nstep_boot, pseudo = target_columns(tgt, env_mb)
    return prop_step(q, env_mb, label_mb, weights, td1_boot, nstep_boot,
                     pseudo_actions=pseudo, label_term="margin")
