#!/usr/bin/env python3
"""Convert a MULAN-style ARFF dataset (plus its XML label list) into the
labelmp text format and schema.

MULAN distributions (Bibtex, Delicious, Bookmarks, ...) ship
<name>-train.arff / <name>-test.arff with binary label attributes named in
<name>.xml. Attributes not named in the XML are treated as features, in
attribute order, and emitted as sparse id:value pairs.

Usage:
    python scripts/arff_to_labelmp.py bibtex.xml out_dir \
        --train bibtex-train.arff --test bibtex-test.arff --val-fraction 0.1

Writes out_dir/{train,val,test}.txt and out_dir/schema.txt. The validation
split is carved from the tail of a deterministic shuffle of the training
file when --val-fraction is given.
"""

import argparse
import re
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np


def parse_label_names(xml_path):
    root = ET.parse(xml_path).getroot()
    names = [el.attrib["name"] for el in root.iter() if el.tag.endswith("label")]
    if not names:
        sys.exit(f"{xml_path}: no <label> entries found")
    return names


def _unquote(name):
    return name[1:-1] if name[:1] in "'\"" and name[-1:] == name[:1] else name


def parse_arff(path, label_names):
    attributes = []
    data_lines = []
    in_data = False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            if in_data:
                data_lines.append(line)
            elif line.lower().startswith("@attribute"):
                parts = line.split(None, 2)
                attributes.append(_unquote(parts[1]))
            elif line.lower().startswith("@data"):
                in_data = True
    label_set = set(label_names)
    label_pos = {}
    feature_pos = []
    for idx, name in enumerate(attributes):
        if name in label_set:
            label_pos[idx] = label_names.index(name)
        else:
            feature_pos.append(idx)
    feature_index = {attr_idx: feat_id for feat_id, attr_idx in enumerate(feature_pos)}

    rows = []
    for line in data_lines:
        values = {}
        if line.startswith("{"):
            for item in re.findall(r"(\d+)\s+([^,}]+)", line):
                values[int(item[0])] = float(item[1])
        else:
            for idx, tok in enumerate(line.split(",")):
                tok = tok.strip()
                if tok and tok != "0":
                    values[idx] = float(tok)
        labels = sorted(label_pos[i] for i, v in values.items()
                        if i in label_pos and v != 0)
        feats = sorted((feature_index[i], v) for i, v in values.items()
                       if i in feature_index and v != 0)
        if not feats:
            continue  # labelmp requires at least one active feature
        rows.append((labels, feats))
    return rows, len(feature_pos)


def write_rows(rows, path):
    with open(path, "w") as fh:
        for labels, feats in rows:
            label_text = ",".join(str(i) for i in labels)
            feat_text = " ".join(
                f"{fid}:{int(v) if v == int(v) else v}" for fid, v in feats)
            fh.write(f"{label_text}\t{feat_text}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("xml", help="MULAN label-list XML")
    ap.add_argument("out_dir")
    ap.add_argument("--train", required=True)
    ap.add_argument("--test", required=True)
    ap.add_argument("--val", help="separate validation ARFF, if provided")
    ap.add_argument("--val-fraction", type=float, default=0.1,
                    help="carve this fraction of train for validation")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    labels = parse_label_names(args.xml)
    train_rows, n_features = parse_arff(args.train, labels)
    test_rows, _ = parse_arff(args.test, labels)

    if args.val:
        val_rows, _ = parse_arff(args.val, labels)
    else:
        order = np.random.Generator(np.random.Philox(args.seed)).permutation(
            len(train_rows))
        n_val = round(len(train_rows) * args.val_fraction)
        val_rows = [train_rows[i] for i in order[:n_val]]
        train_rows = [train_rows[i] for i in order[n_val:]]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(train_rows, out / "train.txt")
    write_rows(val_rows, out / "val.txt")
    write_rows(test_rows, out / "test.txt")
    (out / "schema.txt").write_text(
        f"L = {len(labels)}\ndelta = {n_features}\ninput_kind = tabular\n")
    print(f"{out}: train {len(train_rows)}, val {len(val_rows)}, "
          f"test {len(test_rows)}, L={len(labels)}, delta={n_features}")


if __name__ == "__main__":
    main()
