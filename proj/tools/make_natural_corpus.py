#!/usr/bin/env python3
"""Build a plain-English sentence corpus from text that ships with CPython.

Sources: the interactive help topics (pydoc_data) and the docstrings of the
standard library modules. Output is one lowercased, whitespace-tokenized
sentence per line. The result is deterministic for a given Python version.

usage: make_natural_corpus.py OUT [--count N]
"""
import argparse
import ast
import pathlib
import re
import sysconfig

import pydoc_data.topics

TOKEN = re.compile(r"[a-z]+(?:'[a-z]+)?|[0-9]+|[,;:()]")
CODEY = set("{}[]=_<>*/\\@#$%|`")


def paragraphs(text):
    for para in re.split(r"\n\s*\n", text):
        lines = para.split("\n")
        if any(l.strip().startswith((">>>", "...")) for l in lines):
            continue
        if sum(c in CODEY for c in para) > 2:
            continue
        yield " ".join(l.strip() for l in lines)


def sentences(text):
    for para in paragraphs(text):
        for s in re.split(r"(?<=[.!?])\s+", para):
            toks = TOKEN.findall(s.lower())
            words = [t for t in toks if t.isalpha()]
            if 4 <= len(toks) <= 40 and len(words) >= 0.75 * len(toks):
                yield " ".join(toks)


def docstrings(root):
    for path in sorted(root.rglob("*.py")):
        rel = path.relative_to(root).parts
        if any(p in ("test", "tests", "idlelib", "site-packages", "dist-packages") for p in rel):
            continue
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
        except (SyntaxError, UnicodeDecodeError, ValueError):
            continue
        for node in ast.walk(tree):
            if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                doc = ast.get_docstring(node)
                if doc:
                    yield doc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--count", type=int, default=10000)
    args = ap.parse_args()

    texts = [pydoc_data.topics.topics[k] for k in sorted(pydoc_data.topics.topics)]
    texts.extend(docstrings(pathlib.Path(sysconfig.get_paths()["stdlib"])))

    out = []
    for text in texts:
        out.extend(sentences(text))
        if len(out) >= args.count:
            break
    if len(out) < args.count:
        raise SystemExit(f"only {len(out)} sentences available")
    pathlib.Path(args.out).write_text("\n".join(out[: args.count]) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
