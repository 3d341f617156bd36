import numpy as np
import pytest


def numerical_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-12, np.max(np.abs(a)), np.max(np.abs(b))))


def planted_blobs(K, seed, d=8, per=12, ratio=5.0, spread=0.2):
    """Gaussian blobs at simplex-like random centres, min centre distance >= ratio * blob diameter."""
    rng = np.random.default_rng(seed)
    while True:
        centres = rng.standard_normal((K, d))
        dists = np.linalg.norm(centres[:, None] - centres[None], axis=-1)[np.triu_indices(K, 1)]
        if dists.min() > 0.5:
            break
    centres *= ratio * 2 * spread * np.sqrt(d) / dists.min()
    x = np.concatenate([c + spread * rng.standard_normal((per, d)) for c in centres])
    labels = np.repeat(np.arange(K), per)
    perm = rng.permutation(len(x))
    return x[perm], labels[perm]


def write_pcm16(path, frames, sample_rate=22050, channels=1):
    import wave
    frames = np.asarray(frames, dtype="<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(frames.tobytes())


def sturm_eigenvalues(a, tol=1e-13):
    """Independent oracle: Householder tridiagonalization then Sturm-sequence bisection."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = -np.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] -= alpha
        nv = np.linalg.norm(v)
        if nv < 1e-300:
            continue
        v /= nv
        h = np.eye(n)
        h[k + 1:, k + 1:] -= 2.0 * np.outer(v, v)
        a = h @ a @ h
    d = np.diag(a).copy()
    e = np.array([a[i + 1, i] for i in range(n - 1)])

    def count_below(x):
        cnt, q = 0, 1.0
        for i in range(n):
            q = d[i] - x - (e[i - 1] ** 2 / q if i > 0 else 0.0)
            if q == 0.0:
                q = 1e-300
            if q < 0:
                cnt += 1
        return cnt

    r = np.abs(d).max() + 2 * (np.abs(e).max() if n > 1 else 0.0) + 1.0
    out = []
    for j in range(n):
        lo, hi = -r, r
        while hi - lo > tol * r:
            mid = 0.5 * (lo + hi)
            if count_below(mid) > j:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}")
