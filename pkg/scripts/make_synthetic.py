"""Write a synthetic tweet-paraphrasing dataset in the LaMP questions/golds layout.

    python scripts/make_synthetic.py out/ --users 1000 --items 50
"""

import argparse
import json
from pathlib import Path

from lampsum.synthetic import synthetic_tweets


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--users", type=int, default=1000)
    ap.add_argument("--items", type=int, default=50)
    ap.add_argument("--words", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    instances, profiles = synthetic_tweets(args.users, args.items, args.words, args.seed)
    questions = [{"id": i.instance_id, "user_id": i.user_id, "input": i.input,
                  "profile": [{"id": it.item_id, **it.fields} for it in profiles[i.user_id].items]}
                 for i in instances]
    golds = {"task": "LaMP_7", "golds": [{"id": i.instance_id, "output": i.gold} for i in instances]}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "questions.json").write_text(json.dumps(questions), encoding="utf-8")
    (args.out_dir / "golds.json").write_text(json.dumps(golds), encoding="utf-8")
    print(f"{len(instances)} questions, {sum(len(p) for p in profiles.values())} profile items -> {args.out_dir}")


if __name__ == "__main__":
    main()
