"""Smoke test for the neusurf_py extension: train a small sphere model and
extract its surface."""

import math
import os
import tempfile

import neusurf_py as ns


def main():
    points = ns.PointSet.sphere(n_s=200, n_i=20, seed=0)
    assert len(points) == 220
    assert points.counts() == (200, 20, 0)
    assert sorted(set(points.labels())) == [0, 1]

    config = ns.NetworkConfig("sqrhw", hidden_layers=3, width=20, seed=1)
    assert config.num_params == 3 * 20 + 20 + 2 * (20 * 20 + 20) + 20 + 1

    result = ns.train_model(config, points, epochs=150)
    print(f"epochs {result.epochs}, final loss {result.final_loss:.3e}, {result.termination}")
    assert result.final_loss < 1e-3
    assert len(result.losses) == result.epochs
    assert all(b <= a for a, b in zip(result.losses, result.losses[1:]))

    model = result.model
    inside, surface, outside = model.predict([(0, 0, 0), (1, 0, 0), (0, 0, 1.8)])
    print(f"field at centre {inside:.3f}, on surface {surface:.3f}, outside {outside:.3f}")
    assert inside > 0.5 and abs(surface) < 0.1

    mesh = model.reconstruct(resolution=40)
    mean_err, max_err = mesh.sphere_error(1.0)
    print(f"{len(mesh)} triangles, watertight {mesh.watertight}, "
          f"euler {mesh.euler_characteristic}, mean radial error {mean_err:.2e}")
    assert mesh.watertight and mesh.euler_characteristic == 2
    assert mean_err < 0.05

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = os.path.join(tmp, "checkpoint.bin")
        model.save(ckpt)
        again = ns.Model.load(ckpt)
        assert again.predict([(0.3, 0.2, 0.1)]) == model.predict([(0.3, 0.2, 0.1)])
        mesh.export(os.path.join(tmp, "mesh.ply"), "ply")

    assert math.isclose(ns.mse([1.0, 0.0], [0.0, 0.0]), 0.5)
    assert ns.norm_stability([2.0] * 20) == 0.0
    try:
        ns.NetworkConfig("cnn")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown architecture accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
