"""Smoke test for the carddeck extension module.

Builds the extension in release mode unless CARDDECK_LIB points at a built
library, then exercises data, pruning, spectra, gating and decks.
"""

import importlib.util
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    lib = os.environ.get("CARDDECK_LIB")
    if lib is None:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "carddeck-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
        lib = ROOT / "target" / "release" / "libcarddeck_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "carddeck.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("carddeck", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    cd = load_module()
    train, test = cd.synthetic_dataset(seed=0, classes=3, count=300, height=8, width=8)
    assert len(train) + len(test) == 300
    shape = train.sample_shape
    assert shape == [3, 8, 8]

    assert abs(cd.gmp_sparsity(0.0, 0.9, 5, 105, 1, 110) - 0.9) < 1e-12
    assert cd.gmp_sparsity(0.0, 0.9, 5, 105, 1, 5) == 0.0

    net = cd.Network.mlp(shape, [16], 3)
    dense, _ = cd.prune(net, train, "dense", 0.0, epochs=3, seed=1)
    pruned, report = cd.prune(net, train, "ft", 0.9, epochs=3, seed=1)
    assert abs(pruned.sparsity - report["achieved_sparsity"]) < 1e-12
    assert abs(pruned.sparsity - 0.9) <= 1.0 / pruned.total_weights
    binary, _ = cd.prune(net, train, "bp", 0.9, epochs=2, lr=0.5, seed=1, augmentation="gaussian")
    assert binary.memory_bits == binary.surviving_weights
    print(f"dense acc {dense.evaluate(test):.3f}, ft-90 acc {pruned.evaluate(test):.3f}, bp-90 acc {binary.evaluate(test):.3f}")

    restored = cd.Network.from_bytes(pruned.to_bytes())
    images, batch_shape = test.batch(list(range(8)))
    assert restored.predict_proba(images, batch_shape) == pruned.predict_proba(images, batch_shape)

    power = cd.radial_power_spectrum(test.image(0), shape)
    sig = cd.signature(test.image(0), shape)
    assert len(sig) == 5 and len(power) >= len(sig)
    assert abs(sum(v * v for v in sig) - 1.0) < 1e-9

    cells = cd.heatmap(pruned, test, eps=0.0, seed=0)
    assert all(abs(e - (1.0 - pruned.evaluate(test))) < 1e-12 for _, _, e in cells)

    clean = cd.SignatureIndex.build(train, "clean", 40, seed=1)
    noisy = cd.SignatureIndex.build(train, "gaussian", 40, seed=1)
    decision = cd.select([clean, noisy], images, batch_shape)
    assert decision["selected"] and set(decision["distances"]) == {"clean", "gaussian"}
    assert abs(clean.d_ss(images, batch_shape) - decision["distances"]["clean"]) < 1e-12

    deck = cd.Deck([(dense, "clean", "dense"), (binary, "gaussian", "bp")], [clean, noisy])
    probs, _ = deck.predict(images, batch_shape, "agnostic")
    assert all(abs(sum(row) - 1.0) < 1e-5 for row in probs)
    deck.reset_counter()
    _, picked = deck.predict(images, batch_shape, "adaptive")
    assert deck.forward_passes == len(picked)
    result = deck.evaluate(test, "adaptive", severities=[3], batch=16)
    print(f"deck clean acc {result['clean_acc']:.3f}, corrupted {result['mean_corrupted_acc']:.3f}")

    with tempfile.TemporaryDirectory() as out:
        cells_total, computed, failures = cd.run_grid("", out)
        assert (cells_total, computed, failures) == (0, 0, [])
    print("smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
