"""Physical constants (SI) shared by every module."""

from scipy import constants as _sc

hbar = _sc.hbar
c = _sc.c
epsilon_0 = _sc.epsilon_0
mu_0 = _sc.mu_0

TABLE = {
    "hbar": hbar,
    "c": c,
    "epsilon_0": epsilon_0,
    "mu_0": mu_0,
}
