"""Feeding MMD and J(W) observations into the running balance state."""

from dwlab import BalanceState, lda_criterion, scatter, update_and_balance
import numpy as np

x = np.array([[0.0], [2.0], [4.0], [6.0]])
print("1-D J(W):", lda_criterion(scatter(x, np.array([0, 0, 1, 1]))))

history = [
    (0.40, 2.0),   # first epoch: nothing to normalize against yet
    (0.30, 3.0),
    (0.35, 6.0),   # alignment regressed while discriminability improved
    (0.10, 4.0),   # well aligned, discriminability slipping
    (0.10, 6.5),
]
state = BalanceState()
for mmd_value, j_value in history:
    state = update_and_balance(state, mmd_value, j_value)
    print(f"mmd={mmd_value:.2f} J={j_value:.1f} -> m~={state.mmd_norm} j~={state.j_norm} "
          f"tau={state.tau:.3f}")
print("tau near 1 pushes toward alignment, near 0 toward class discrimination")
