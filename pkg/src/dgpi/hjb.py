"""Hamiltonian of a value/policy pair and the losses built from it.

For a value approximator ``V`` and policy ``pi`` on a plant ``x' = f(x, u)``
with running cost ``l``::

    H(x)   = l(x, pi(x)) + dV/dx(x) . f(x, pi(x))
    L_c    = mean(H^2) + eta * V(x_e)
    L_a    = mean(H)
    Vdot   = dV/dx . f = H - l

Every function takes optional ``value_w`` / ``policy_w`` arguments. Passing
traced ``Var`` parameters makes the result differentiable in them, which is
how the trainer gets second-order terms such as ``d/dw [dV/dx]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dynamics import DynamicsModel
from .oracles import rollout


@dataclass
class HamiltonianTerms:
    H: object
    utility: object
    vdot: object
    dVdx: object


class HamiltonianEval:
    def __init__(self, model: DynamicsModel, value, policy, eta: float = 0.1):
        if eta < 0:
            raise ValueError("eta must be non-negative")
        if eta == 0 and not getattr(value, "zero_at_shift", False):
            raise ValueError("eta = 0 needs a value function that vanishes at equilibrium "
                             "by construction (zero-bias value network)")
        self.model = model
        self.value = value
        self.policy = policy
        self.eta = float(eta)

    # ------------------------------------------------------------ core

    def terms(self, x, value_w=None, policy_w=None) -> HamiltonianTerms:
        tape = _tape_of(value_w, policy_w) or ad.Tape()
        xv = tape.var(np.asarray(x, dtype=np.float64))
        V = self.value(xv, value_w)
        (dVdx,) = ad.grad(ad.sum_(V), [xv], create_graph=True)
        u = self.policy(xv, policy_w)
        l = self.model.utility(xv, u)
        vdot = ad.dot(dVdx, self.model.f(xv, u))
        return HamiltonianTerms(ad.add(l, vdot), l, vdot, dVdx)

    def hamiltonian(self, x, value_w=None, policy_w=None):
        return _maybe_value(self.terms(x, value_w, policy_w).H, value_w, policy_w)

    def vdot(self, x, value_w=None, policy_w=None):
        return _maybe_value(self.terms(x, value_w, policy_w).vdot, value_w, policy_w)

    def equilibrium_value(self, value_w=None):
        return self.value(self.model.x_e, value_w)

    def critic_loss(self, batch, value_w=None, policy_w=None, H=None):
        if len(batch) == 0:
            raise ValueError("empty batch")
        if H is None:
            H = self.terms(batch, value_w, policy_w).H
        loss = ad.mean(ad.square(H))
        if self.eta:
            loss = ad.add(loss, ad.scale(self.equilibrium_value(value_w), self.eta))
        return _maybe_value(loss, value_w, policy_w)

    def actor_loss(self, batch, value_w=None, policy_w=None, H=None):
        if len(batch) == 0:
            raise ValueError("empty batch")
        if H is None:
            H = self.terms(batch, value_w, policy_w).H
        return _maybe_value(ad.mean(H), value_w, policy_w)

    # ------------------------------------------------------------ gradients

    def losses_and_grads(self, batch, value_params, policy_params,
                         wrt=("critic_value", "critic_policy", "actor_policy")):
        """Evaluate both losses on one tape and differentiate the requested pairs.

        Returns ``(L_c, L_a, H, grads)`` where ``grads`` maps each name in
        ``wrt`` (``critic_value``, ``critic_policy``, ``actor_policy``) to a
        flat gradient array.
        """
        tape = ad.Tape()
        vw = tape.var(value_params)
        pw = tape.var(policy_params)
        H = self.terms(batch, vw, pw).H
        Lc = self.critic_loss(batch, vw, pw, H=H)
        La = self.actor_loss(batch, vw, pw, H=H)
        grads = {}
        critic = [name for name in ("critic_value", "critic_policy") if name in wrt]
        if critic:
            targets = [vw if name == "critic_value" else pw for name in critic]
            grads.update(zip(critic, ad.grad(Lc, targets)))
        if "actor_policy" in wrt:
            (grads["actor_policy"],) = ad.grad(La, [pw])
        return float(Lc.value), float(La.value), H.value.copy(), grads

    # ------------------------------------------------------------ admissibility

    def admissibility_check(self, test_states, horizon: float = 20.0, dt: float = 0.01,
                            h_tol: float = 1e-9, fraction: float = 0.01) -> dict:
        """Sampled Lyapunov test plus closed-loop rollouts from every test state.

        ``admissible`` needs ``max H <= h_tol`` over the samples and every
        rollout to shrink its distance to equilibrium below ``fraction`` of
        the initial distance within ``horizon``. Leaving a 10x inflated state
        box counts as not converged.
        """
        states = np.atleast_2d(np.asarray(test_states, dtype=np.float64))
        H = self.hamiltonian(states)
        max_H = float(np.max(H))
        traj = rollout(self.model, self.policy, states, horizon, dt)
        dev = np.linalg.norm(traj.x - self.model.x_e, axis=-1)
        start = dev[0]
        converged = np.any(dev <= fraction * start, axis=0) & ~traj.truncated
        frac = float(np.mean(converged))
        return {"admissible": bool(max_H <= h_tol and frac == 1.0),
                "max_H": max_H, "converged_fraction": frac}


def _tape_of(*ws):
    for w in ws:
        if isinstance(w, ad.Var):
            return w.tape
    return None


def _maybe_value(result, *ws):
    """Untraced callers get plain arrays back."""
    if _tape_of(*ws) is None and isinstance(result, ad.Var):
        return result.value.copy()
    return result


def mean_abs_hamiltonian(h: HamiltonianEval, batch) -> float:
    return float(np.mean(np.abs(h.hamiltonian(np.atleast_2d(batch)))))
