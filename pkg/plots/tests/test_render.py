import json
from pathlib import Path

import numpy as np
import pytest

from geolab_plots.cli import main
from geolab_plots.render import EmptyInput, FigureRequest, SchemaMismatch, render


@pytest.fixture()
def artifacts(tmp_path):
    """Small artifacts following the primary package's documented schemas."""
    rng = np.random.default_rng(0)
    orbit = tmp_path / "orbit.csv"
    phis = np.mod(np.linspace(0, 12.0, 120), 2 * np.pi)
    ys = 1.2 + 0.3 * np.sin(np.linspace(0, 8.0, 120))
    arcs = np.linspace(0, 4.0, 120)
    orbit.write_text(
        "phi,y,arclength\n"
        + "\n".join(f"{float(p)!r},{float(y)!r},{float(a)!r}"
                     for p, y, a in zip(phis, ys, arcs))
        + "\n"
    )
    branch_u = tmp_path / "branch_unstable.csv"
    t = np.linspace(0, 1.5, 80)
    branch_u.write_text(
        "phi,y,arclength\n"
        + "\n".join(f"{float(3.0 + x)!r},{float(1.5 + 0.4 * np.sin(4 * x))!r},{float(x)!r}"
                    for x in t)
        + "\n"
    )
    branch_s = tmp_path / "branch_stable.csv"
    branch_s.write_text(
        "phi,y,arclength\n"
        + "\n".join(f"{float(3.0 + x)!r},{float(1.5 - 0.4 * np.sin(4 * x))!r},{float(x)!r}"
                    for x in t)
        + "\n"
    )
    crossings = tmp_path / "crossings.json"
    crossings.write_text(json.dumps({
        "crossings": [
            {"point": [3.4, 1.5], "angle": 0.21, "segment_u": 3,
             "segment_s": 5, "transverse": True},
        ],
        "meta": {},
    }))
    traj = tmp_path / "trajectory.csv"
    ts = np.linspace(0, 10, 60)
    H = 0.5 + 1e-12 * np.sin(ts)
    xs = np.cos(ts)
    traj.write_text(
        "t,x1,x2,x3,u1,u2,u3,H\n"
        + "\n".join(
            f"{float(a)!r},{float(b)!r},0.0,0.0,0.0,1.0,0.0,{float(h)!r}"
            for a, b, h in zip(ts, xs, H)
        )
        + "\n"
    )
    registry = tmp_path / "registry.json"
    registry.write_text(json.dumps({
        "surface": {"name": "ellipsoid"},
        "orbits": [
            {"label": "hyperbolic", "eigenvalues": [[8.64, 0.0], [0.1157, 0.0]]},
            {"label": "elliptic",
             "eigenvalues": [[-0.7359, 0.6771], [-0.7359, -0.6771]]},
        ],
    }))
    return {
        "orbit": orbit, "branch_u": branch_u, "branch_s": branch_s,
        "crossings": crossings, "traj": traj, "registry": registry,
        "dir": tmp_path,
    }


KIND_INPUTS = {
    "section": ("orbit",),
    "branches": ("branch_u", "branch_s", "crossings"),
    "drift": ("traj",),
    "spectrum": ("registry",),
}


@pytest.mark.parametrize("kind", sorted(KIND_INPUTS))
def test_each_kind_renders_nonempty_and_deterministic(kind, artifacts):
    inputs = [str(artifacts[k]) for k in KIND_INPUTS[kind]]
    out1 = artifacts["dir"] / f"{kind}_1.png"
    out2 = artifacts["dir"] / f"{kind}_2.png"
    render(FigureRequest(kind=kind, inputs=inputs, output=str(out1)))
    render(FigureRequest(kind=kind, inputs=inputs, output=str(out2)))
    b1 = out1.read_bytes()
    b2 = out2.read_bytes()
    assert len(b1) > 1000
    assert b1 == b2


def test_missing_file_raises_schema_mismatch(artifacts):
    req = FigureRequest(kind="section", inputs=["/nonexistent.csv"],
                        output=str(artifacts["dir"] / "x.png"))
    with pytest.raises(SchemaMismatch):
        render(req)


def test_empty_csv_raises_empty_input(artifacts):
    empty = artifacts["dir"] / "empty.csv"
    empty.write_text("phi,y,arclength\n")
    req = FigureRequest(kind="section", inputs=[str(empty)],
                        output=str(artifacts["dir"] / "x.png"))
    with pytest.raises(EmptyInput):
        render(req)


def test_wrong_columns_raise_schema_mismatch(artifacts):
    bad = artifacts["dir"] / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    req = FigureRequest(kind="drift", inputs=[str(bad)],
                        output=str(artifacts["dir"] / "x.png"))
    with pytest.raises(SchemaMismatch):
        render(req)


def test_unknown_kind_rejected(artifacts):
    req = FigureRequest(kind="pie", inputs=[str(artifacts["orbit"])],
                        output=str(artifacts["dir"] / "x.png"))
    with pytest.raises(SchemaMismatch):
        render(req)


def test_schema_version_pinned(artifacts):
    req = FigureRequest(kind="section", inputs=[str(artifacts["orbit"])],
                        output=str(artifacts["dir"] / "x.png"),
                        schema_version=99)
    with pytest.raises(SchemaMismatch):
        render(req)


def test_cli_render_roundtrip(artifacts, capsys):
    req_path = artifacts["dir"] / "request.json"
    out_path = artifacts["dir"] / "cli.png"
    req_path.write_text(json.dumps({
        "kind": "spectrum",
        "inputs": [str(artifacts["registry"])],
        "output": str(out_path),
    }))
    assert main(["render", str(req_path)]) == 0
    assert out_path.exists() and out_path.stat().st_size > 1000
    bad = artifacts["dir"] / "bad_request.json"
    bad.write_text(json.dumps({"kind": "section"}))
    assert main(["render", str(bad)]) == 2
