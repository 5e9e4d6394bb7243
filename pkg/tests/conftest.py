import numpy as np

from vialnet.model import build_convnet3_4


def he_scaled_net(n_labels, size, seed, dtype=np.float64):
    """Random ConvNet3_4 with He-uniform weights and small random biases."""
    net = build_convnet3_4(n_labels, size, seed=seed, dtype=dtype)
    rng = np.random.default_rng(10_000 + seed)
    for layer in net.layers:
        bound = np.sqrt(6.0 / layer.fan_in)
        layer.weight[...] = rng.uniform(-bound, bound, layer.weight.shape)
        layer.bias[...] = rng.uniform(-0.1, 0.1, layer.bias.shape)
    return net


def top_rows_blind_net(seed=0, blind_rows=6):
    """16x16 net whose first dense layer ignores conv features from the top ``blind_rows`` rows.

    A conv3 output at row i sees input rows i..i+6, and input row r only
    reaches outputs with i <= r, so input rows 0..blind_rows-1 have no path
    to the logits.
    """
    net = he_scaled_net(2, 16, seed)
    h, w, c = net.config.feature_shapes()[-1]
    net.dense_layers[0].weight[:, :blind_rows * w * c] = 0
    return net


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Log one acceptance result line, then fail the calling test if it did not pass."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
