# SPDX-License-Identifier: Apache-2.0
"""Smoke test for the tromux Python module.

Build and install first:  pip install -e crates/py --no-build-isolation
"""

import tempfile
from pathlib import Path

import tromux


def main() -> None:
    lib = tromux.CellLibrary()
    assert lib.complement("AND2") == "NAND2"
    assert tromux.key_length(1234, "mux", 2.0) == 123

    design = tromux.Netlist.generate(150, 3, seed=7)
    design.validate()
    text = design.to_text("bench")
    again = tromux.Netlist.parse(text, "bench")
    assert again.num_cells == design.num_cells

    cfg = tromux.FlowConfig(target_utilization=0.5, tpc_cycles=500, variant="xor")
    res = tromux.harden(design, cfg)
    report = res.report
    key = res.key
    assert len(key) == report["key_length"] == res.locked.key_length
    assert report["final"]["open_sites"] < report["baseline"]["open_sites"]
    assert tromux.equivalent(design, res.locked, key)
    wrong = [not b for b in key]
    assert not tromux.equivalent(design, res.locked, wrong)

    base = res.insert_trojan("leak", hardened=False)
    hard = res.insert_trojan("leak", hardened=True)
    assert base["inserted"] and not hard["inserted"], (base, hard)

    pred = tromux.imbalance_attack(res.locked)
    s = tromux.score(pred, key)
    assert s["k_total"] == len(key)
    s = tromux.score(tromux.random_guess(len(key), seed=3), key)
    assert s["k_x"] == 0

    profile = tromux.toggle_profile(res.locked, key=key, cycles=100)
    assert all(0.0 <= v <= 1.0 for v in profile.values())
    t = tromux.sta(design, report["clock_period"])
    assert t["max_delay"] > 0

    try:
        tromux.FlowConfig(bogus=1)
    except tromux.TromuxError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    with tempfile.TemporaryDirectory() as d:
        res.write(d, "v")
        assert (Path(d) / "locked.v").is_file()

    print(f"ok: {design!r} -> key {len(key)} bits, open {report['baseline']['open_sites']} -> {report['final']['open_sites']}")


if __name__ == "__main__":
    main()
