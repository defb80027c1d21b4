"""Write a Gaussian-mixture classification dataset in the columnar text format.

This script:
1. Draws n points from K spherical Gaussians (optional label noise)
2. Optionally trains a full-batch teacher and attaches its soft labels
3. Saves the dataset (and an optional clean test split) as CSV

    python scripts/generate_dataset.py data/mix.csv --classes 10 --features 5 -n 500
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import configure_logging, logger
from src.classification import (
    SOFTMAX_LINEAR,
    attach_teacher_labels,
    fit_full_batch,
    generate_gaussian_mixture,
    generate_train_test,
    init_model,
)
from src.csv_builder import save_dataset
from src.errors import LabError


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output", help="dataset CSV path")
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--features", type=int, default=2)
    parser.add_argument("-n", type=int, default=200, help="training examples")
    parser.add_argument("--test", type=int, default=0, help="clean held-out examples (written to <output>.test.csv)")
    parser.add_argument("--separation", type=float, default=3.0)
    parser.add_argument("--noise", type=float, default=0.0, help="label noise rate in [0, 1)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--teacher-steps", type=int, default=0, help="attach teacher labels after this many full-batch steps")
    parser.add_argument("--teacher-eta", type=float, default=0.5)
    parser.add_argument("--temperature", type=float, default=1.0)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    configure_logging()
    try:
        if args.test > 0:
            train, test = generate_train_test(
                args.classes, args.features, args.n, args.test,
                args.separation, args.noise, args.seed,
            )
        else:
            train, test = generate_gaussian_mixture(
                args.classes, args.features, args.n, args.separation, args.noise, args.seed
            ), None

        if args.teacher_steps > 0:
            start = init_model(SOFTMAX_LINEAR, args.features, args.classes)
            teacher = fit_full_batch(start, train, args.teacher_eta, args.teacher_steps)
            train = attach_teacher_labels(train, teacher, args.temperature)

        save_dataset(train, args.output)
        logger.info("Wrote %d examples to %s", train.num_examples, args.output)
        if test is not None:
            root, ext = os.path.splitext(args.output)
            test_path = f"{root}.test{ext or '.csv'}"
            save_dataset(test, test_path)
            logger.info("Wrote %d held-out examples to %s", test.num_examples, test_path)
        return 0
    except LabError as e:
        logger.error("Dataset generation failed: %s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
