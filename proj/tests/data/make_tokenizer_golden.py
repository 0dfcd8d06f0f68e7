"""Regenerates tokenizer_vocab.txt and tokenizer_golden.jsonl with the HF BERT tokenizer."""
import collections
import json
import pathlib
import random
import re

from transformers import BertTokenizer
from transformers.models.bert.tokenization_bert_legacy import BasicTokenizer

here = pathlib.Path(__file__).parent
root = here.parent.parent

text = (root / "paper.md").read_text(encoding="utf-8")
lines = []
for raw in text.splitlines():
    raw = raw.strip()
    if not raw:
        continue
    lines.extend(s for s in re.split(r"(?<=[.!?])\s+", raw) if s)

rng = random.Random(7)
edge = [
    "",
    "unaffable",
    "Café naïve résumé façade",
    "ÀÉÎÕÜ àéîõü",
    "日本語のテキストと中文",
    "hello,world!how's it going?",
    "\t tabs  and   spaces\n",
    "don't e-mail me @ home #1",
    "zero​width and soft­hyphen",
    "control\x07char",
    "x" * 150,
    "Ｆｕｌｌｗｉｄｔｈ ｌｅｔｔｅｒｓ",
    "Straße ǅemal ﬁne",
    "emoji 🙂 test",
    "A.B.C. (d) [e] {f} <g>",
    "ℌello ①②③",
]
corpus = edge + rng.sample(lines, 1000 - len(edge))

basic = BasicTokenizer(do_lower_case=True)
counts = collections.Counter(w for s in corpus for w in basic.tokenize(s))
vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "un", "##aff", "##able"]
seen = set(vocab)


def add(tok):
    if tok not in seen:
        seen.add(tok)
        vocab.append(tok)


for word, _ in counts.most_common(700):
    add(word)
for word, _ in counts.most_common(2500)[700:]:
    # Prefix plus continuation pieces so longer words split.
    add(word[:3])
    for i in range(3, len(word), 3):
        add("##" + word[i:i + 3])
for ch in "abcdefghijklmnopqrstuvwxyz0123456789":
    add(ch)
    add("##" + ch)

(here / "tokenizer_vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
tok = BertTokenizer(str(here / "tokenizer_vocab.txt"), do_lower_case=True)
with open(here / "tokenizer_golden.jsonl", "w", encoding="utf-8") as out:
    for s in corpus:
        ids = tok.convert_tokens_to_ids(tok.tokenize(s))
        out.write(json.dumps({"text": s, "ids": ids}, ensure_ascii=False) + "\n")
