"""What the entropy term does to generated replay samples.

Trains a toy teacher, then two generators against it: one with the entropy
term (weight 1) and one without (weight 0). Prints the mean teacher entropy
of 1000 samples from each and how the teacher labels them.

    python3 demos/entropy_term.py [seed]
"""
import sys

import numpy as np

from fscil_replay.metrics import replay_label_histogram
from fscil_replay.presets import build_protocol, preset
from fscil_replay.replay import GenTrainConfig, sample_replay, train_generator
from fscil_replay.session import ProtocolConfig, base_train


def main(seed=0):
    run = preset("toy")
    sessions, _ = build_protocol(run["dataset"], seed)
    teacher = base_train(sessions[0], ProtocolConfig.from_dict({**run["protocol"], "seed": seed}))
    n_classes = len(teacher.class_ids)
    for weight in (1.0, 0.0):
        gen, _ = train_generator(teacher, GenTrainConfig(**{**run["protocol"]["gen_cfg"], "entropy_weight": weight,
                                                            "seed": seed}))
        batch = sample_replay(gen, teacher, 1000, np.random.default_rng(seed))
        hist = replay_label_histogram(batch, n_classes)
        print(f"entropy weight {weight}: mean teacher entropy {batch.teacher_entropy.mean():.3f} nats "
              f"(max {np.log(n_classes):.3f}), labels {hist.tolist()}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
