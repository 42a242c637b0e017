"""Smoke test for the Python bindings.

Build the module first:

    cargo build --release -p regiotoll-py --features extension-module

then run `python3 python/smoke_test.py`. Set REGIOTOLL_LIB to use a library
other than target/release/libregiotoll_py.so.
"""

import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_regiotoll(workdir):
    lib = Path(os.environ.get("REGIOTOLL_LIB", ROOT / "target" / "release" / "libregiotoll_py.so"))
    if not lib.exists():
        sys.exit(f"{lib} not found; build it with --features extension-module")
    shutil.copy(lib, Path(workdir) / "regiotoll.so")
    sys.path.insert(0, str(workdir))
    import regiotoll

    return regiotoll


def main():
    with tempfile.TemporaryDirectory() as tmp:
        rt = import_regiotoll(tmp)
        print("regiotoll", rt.__version__)

        s = rt.Scenario.zurich()
        assert s.regions == 4 and s.horizon_steps == 150, s
        assert abs(s.demand_volume - 10350.0) < 1e-9
        crit = s.critical_accumulations()
        assert abs(crit[0] - 1800.5) < 1.0, crit

        again = rt.Scenario.from_toml(s.to_toml())
        assert again.to_toml() == s.to_toml()
        assert s.with_seed(7).seed == 7

        shares = rt.mnl_split([1.0, 1.0, 1.0], 0.4)
        assert all(abs(p - 1 / 3) < 1e-12 for p in shares)

        q = s.simulate_qdue()
        d = s.solve_dso()
        assert q.steps == d.steps == 150
        assert len(q.accumulation()) == 151 and len(q.splits()[0]) == 36
        assert d.tts < q.tts, (d.tts, q.tts)
        rows = {r["metric"]: r for r in q.compare(d)}
        assert math.isclose(rows["TTS"]["improvement_pct"], rt.improvement(q.tts, d.tts))
        print(f"QDUE TTS {q.tts:.1f} veh h, DSO TTS {d.tts:.1f} veh h, "
              f"improvement {rows['TTS']['improvement_pct']:.2f}%")

        try:
            rt.Scenario.from_toml("bogus = 1\n")
        except ValueError as e:
            print("rejected bad config:", e)
        else:
            raise AssertionError("bad config accepted")

        p = rt.Pipeline(s, Path(tmp) / "out")
        try:
            p.run("train")
        except OSError as e:
            print("missing input reported:", e)
        else:
            raise AssertionError("train ran without qdue")

        manifest = p.run("all")
        assert len(manifest["artifacts"]) > 50
        on_disk = json.loads((Path(tmp) / "out" / "manifest.json").read_text())
        assert on_disk == manifest
        summary = p.summary()
        assert summary["priced"] is not None
        print(f"pipeline wrote {len(manifest['artifacts'])} artifacts, "
              f"priced improvement {summary['priced_tts_improvement_pct']:.2f}%")
    print("smoke test passed")


if __name__ == "__main__":
    main()
