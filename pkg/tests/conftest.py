import csv
from fractions import Fraction

import numpy as np
import pytest

from abssurv import Sample, kidney_csv_path


def load_kidney():
    """(percutaneous, surgical) arms of the catheter data; percutaneous is group 1 throughout."""
    arms = {"percutaneous": ([], []), "surgical": ([], [])}
    with open(kidney_csv_path(), newline="") as fh:
        for row in csv.DictReader(fh):
            t, s = arms[row["type"]]
            t.append(float(row["time"]))
            s.append(int(row["delta"]))
    return Sample(*arms["percutaneous"]), Sample(*arms["surgical"])


@pytest.fixture(scope="session")
def kidney():
    return load_kidney()


@pytest.fixture
def odd_even():
    """Events at 1, 3, 5 versus 2, 4, 6, no censoring."""
    return Sample([1, 3, 5], [1, 1, 1]), Sample([2, 4, 6], [1, 1, 1])


def random_pair(rng, n1=None, n2=None, censor=0.3, ties=False):
    n1 = n1 or int(rng.integers(3, 40))
    n2 = n2 or int(rng.integers(3, 40))

    def arm(n, scale):
        x = rng.exponential(scale, n)
        c = rng.uniform(0, 3 * scale, n) if censor else np.full(n, np.inf)
        t = np.minimum(x, c)
        if ties:
            t = np.ceil(t * 2) / 2
        s = (x <= c).astype(int)
        s[np.argmin(t)] = 1  # at least one event per arm
        return Sample(t, s)

    return arm(n1, rng.uniform(2, 6)), arm(n2, rng.uniform(2, 6))


# ---------------------------------------------------------------------------
# independent oracles


def km_redistribute(times, status):
    """KM by redistribution-to-the-right, in exact fractions.

    Returns a function t -> S(t). Mass of each censored subject is handed in
    equal shares to everyone strictly later (events at the same time count as
    earlier).
    """
    obs = sorted(zip(times, status), key=lambda p: (p[0], -p[1]))
    n = len(obs)
    mass = [Fraction(1, n)] * n
    for i, (t, s) in enumerate(obs):
        if s == 0:
            later = list(range(i + 1, n))
            if later:
                share = mass[i] / len(later)
                for k in later:
                    mass[k] += share
                mass[i] = Fraction(0)
    deaths = [(t, m) for (t, s), m in zip(obs, mass) if s == 1]

    def surv(t):
        return 1 - sum((m for u, m in deaths if u <= t), Fraction(0))

    return surv


def exact_area_between(s1: Sample, s2: Sample, lo, hi):
    """Integral of |S1 - S2| over [lo, hi] using every observation time as a breakpoint."""
    f1 = km_redistribute(list(s1.times), list(s1.status))
    f2 = km_redistribute(list(s2.times), list(s2.status))
    cuts = sorted({float(lo), float(hi)} | {float(t) for t in np.concatenate([s1.times, s2.times]) if lo < t < hi})
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        total += float(abs(f1(a) - f2(a))) * (b - a)
    return total


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

ACCEPTANCE: dict = {}


def record(criterion: int, check: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[criterion]
        failed = [c for c in checks if not c[1]]
        status = "PASS" if not failed else "FAIL"
        shown = failed or checks
        details = "; ".join(f"{name}: {detail}" if detail else name for name, _, detail in shown)
        terminalreporter.write_line(f"criterion {criterion}: {status} ({len(checks) - len(failed)}/{len(checks)} checks) {details}")
