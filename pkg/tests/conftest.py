import numpy as np
import pytest

from rollnet.network import Network, random_network


def make_net_a():
    """Two inputs, identity hidden layer with bias -1, output sums both units."""
    return Network((np.eye(2), np.array([[1.0, 1.0]])),
                   (np.array([-1.0, -1.0]), np.zeros(1)))


@pytest.fixture
def net_a():
    return make_net_a()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_forward(net, x):
    """Loop-by-loop evaluator used as an independent oracle."""
    a = [float(v) for v in x]
    n_layers = len(net.weights)
    for k in range(n_layers):
        w, b = net.weights[k], net.biases[k]
        z = []
        for i in range(w.shape[0]):
            s = float(b[i])
            for j in range(w.shape[1]):
                s += float(w[i, j]) * a[j]
            z.append(s)
        if k < n_layers - 1:
            a = [v if v >= 0 else net.alpha * v for v in z]
        else:
            a = z
    return np.array(a)


def away_from_boundary(net, rng, dim, margin=1e-3, tries=1000):
    from rollnet.network import forward_batch
    for _ in range(tries):
        x = rng.standard_normal(dim)
        zs = forward_batch(net, x)[:-1]
        if not zs or min(np.abs(z).min() for z in zs) > margin:
            return x
    raise RuntimeError("no off-boundary point found")


def random_nets(n, seed=0, max_width=300):
    """Depths 1-5, widths 2-300, ReLU and leaky ReLU."""
    rng = np.random.default_rng(seed)
    nets = []
    for k in range(n):
        depth = 1 + k % 5
        widths = rng.integers(2, max_width + 1, size=depth)
        D = int(rng.integers(2, 40))
        act = "leaky_relu" if k % 2 else "relu"
        alpha = float(rng.choice([0.01, 0.1, 0.3]))
        nets.append(random_network((D, *widths, int(rng.integers(1, 11))), rng, act, alpha))
    return nets


# ---------------------------------------------------------------------------
# trained models shared across modules (expensive; built once per session)

TOY_HIDDEN = (100, 100, 100, 100)
MNIST_HIDDEN = (300, 300, 300, 300)


@pytest.fixture(scope="session")
def toy_data():
    from rollnet.data import gen_toy_2d
    return gen_toy_2d(0)


@pytest.fixture(scope="session")
def toy_models(toy_data):
    """Vanilla and regularized (lambda=1, C=5) toy models with their training time."""
    import time
    from rollnet.roll import RollConfig
    from rollnet.train import toy_recipe, train_model
    out = {}
    for name, cfg in (("vanilla", RollConfig()),
                      ("roll", RollConfig(lam=1.0, c=5.0, gamma="max"))):
        t = time.perf_counter()
        net, hist, best = train_model(toy_data, None, TOY_HIDDEN, toy_recipe(roll=cfg), n_outputs=1)
        out[name] = {"net": net, "history": hist, "best_epoch": best,
                     "seconds": time.perf_counter() - t}
    return out


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """IDX files built from the 5000 MNIST digits bundled with mlxtend.

    Rows are shuffled with a fixed seed; the first 4500 form the training
    file (4050 train / 450 validation after the split) and the last 500 the
    test file.
    """
    mlxtend_data = pytest.importorskip("mlxtend.data")
    from rollnet.data import write_idx
    X, y = mlxtend_data.mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    X = X[order].reshape(-1, 28, 28).astype(np.uint8)
    y = y[order].astype(np.uint8)
    d = tmp_path_factory.mktemp("mnist")
    paths = {k: d / f"{k}.idx" for k in ("train-images", "train-labels", "test-images", "test-labels")}
    write_idx(paths["train-images"], X[:4500])
    write_idx(paths["train-labels"], y[:4500])
    write_idx(paths["test-images"], X[4500:])
    write_idx(paths["test-labels"], y[4500:])
    return paths


@pytest.fixture(scope="session")
def mnist_splits_desk(mnist_idx):
    from rollnet.data import load_idx
    train = load_idx(mnist_idx["train-images"], mnist_idx["train-labels"])
    test = load_idx(mnist_idx["test-images"], mnist_idx["test-labels"])
    tr, va = train.split(len(train) - 450)
    return tr, va, test


@pytest.fixture(scope="session")
def mnist_models(mnist_splits_desk):
    """Vanilla and regularized (lambda=2, C=0.25, gamma=100) 4x300 models, 5 epochs."""
    import time
    from rollnet.roll import RollConfig
    from rollnet.train import mnist_recipe, train_model
    tr, va, _ = mnist_splits_desk
    out = {}
    for name, cfg in (("vanilla", RollConfig()), ("roll", RollConfig(lam=2.0, c=0.25, gamma=100))):
        t = time.perf_counter()
        net, hist, best = train_model(tr, va, MNIST_HIDDEN, mnist_recipe(roll=cfg))
        out[name] = {"net": net.astype(np.float64), "history": hist, "best_epoch": best,
                     "seconds": time.perf_counter() - t}
    return out


# ---------------------------------------------------------------------------
# acceptance summary lines

ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
