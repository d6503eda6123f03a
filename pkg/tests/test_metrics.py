import numpy as np
import pytest

from protoadapt.metrics import average_forgetting, average_performance, spto, summarize


def direct(a):
    """Spreadsheet-style recomputation with explicit double loops."""
    t = len(a)
    if t < 2:
        af = 0.0
    else:
        rel = [(a[j][k] - a[j][j]) / a[j][j] for k in range(t) for j in range(k)]
        af = 100.0 * sum(rel) * 2 / (t * (t - 1))
    ap = sum(a[j][k] for k in range(t) for j in range(k + 1)) * 2 / (t * (t + 1))
    s = sum(a[k][t - 1] for k in range(t))
    p = sum(a[k][k] for k in range(t))
    return af, ap, 2 * s * p / (s + p)


def random_log(rng, t):
    a = [[None] * t for _ in range(t)]
    for k in range(t):
        for j in range(k + 1):
            a[j][k] = float(rng.uniform(1, 100))
    return a


def test_worked_examples():
    a = [[10.0, 12.0], [None, 20.0]]
    assert average_forgetting(a) == pytest.approx(20.0, abs=1e-12)
    assert average_performance(a) == pytest.approx(14.0, abs=1e-12)
    assert spto(a) == pytest.approx(1920 / 62, abs=1e-12)
    assert average_forgetting([[10.0, 8.0], [None, 20.0]]) == pytest.approx(-20.0)


def test_trivial_cases():
    v = 3.5
    a = [[v] * 3 for _ in range(3)]
    assert average_forgetting(a) == 0.0
    assert average_performance(a) == pytest.approx(v)
    assert spto(a) == pytest.approx(3 * v)
    assert average_performance([[7.0]]) == 7.0
    assert average_forgetting([[7.0]]) == 0.0


def test_random_logs_match_direct():
    rng = np.random.default_rng(0)
    for t in (2, 3, 4, 5, 6):
        a = random_log(rng, t)
        af, ap, sp = direct(a)
        assert abs(average_forgetting(a) - af) < 1e-9
        assert abs(average_performance(a) - ap) < 1e-9
        assert abs(spto(a) - sp) < 1e-9
        s = sum(a[k][t - 1] for k in range(t))
        p = sum(a[k][k] for k in range(t))
        assert min(s, p) - 1e-9 <= spto(a) <= max(s, p) + 1e-9


def test_errors():
    with pytest.raises(ZeroDivisionError):
        average_forgetting([[0.0, 1.0], [None, 1.0]])
    with pytest.raises(ValueError):
        average_performance([[1.0, None], [None, 1.0]])
    with pytest.raises(ZeroDivisionError):
        spto([[0.0]])
    assert set(summarize([[1.0]])) == {"average_forgetting", "average_performance", "spto"}
