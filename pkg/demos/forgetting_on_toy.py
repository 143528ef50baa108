"""Fine-tuning forgets the base classes; generator replay keeps them.

Runs the toy 2-D protocol (three base clusters, then three one-class sessions
with five examples each) twice with the ``toy`` preset: once without replay
and once with it, and prints base-class accuracy after every session.

    python3 demos/forgetting_on_toy.py [seed]
"""
import sys

from fscil_replay.presets import build_protocol, preset
from fscil_replay.session import ProtocolConfig, run_protocol


def main(seed=0):
    run = preset("toy")
    sessions, tests = build_protocol(run["dataset"], seed)
    rows = {}
    for name, replay_count in (("fine-tune", 0), ("replay", run["protocol"]["replay_count"])):
        cfg = ProtocolConfig.from_dict({**run["protocol"], "seed": seed, "replay_count": replay_count})
        rows[name] = run_protocol(sessions, tests, cfg)
    print("session  " + "  ".join(f"{n:>22}" for n in rows))
    print("         " + "  ".join(f"{'base acc / all acc':>22}" for _ in rows))
    for i in range(len(sessions)):
        cells = [f"{r.per_session_base_accuracy[i]:10.3f} / {r.per_session_accuracy[i]:.3f}" for r in rows.values()]
        print(f"{i:>7}  " + "  ".join(f"{c:>22}" for c in cells))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
