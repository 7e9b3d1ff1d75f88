#!/usr/bin/env python
"""Write a synthetic labelled corpus (corpus.jsonl + gold.csv)."""
from __future__ import annotations

import argparse
import dataclasses

from scitopic.synthetic import SyntheticSpec, write_dataset


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out_dir")
    defaults = SyntheticSpec()
    for f in dataclasses.fields(SyntheticSpec):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(getattr(defaults, f.name)),
                       default=getattr(defaults, f.name))
    args = p.parse_args()
    spec = SyntheticSpec(**{f.name: getattr(args, f.name) for f in dataclasses.fields(SyntheticSpec)})
    corpus, gold = write_dataset(spec, args.out_dir)
    print(f"wrote {spec.n_docs} documents to {corpus} and labels to {gold}")


if __name__ == "__main__":
    main()
