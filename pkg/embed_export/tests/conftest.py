import json

import pytest

INTENT_WORDS = {
    "balance": ["balance", "account", "funds", "remaining", "money"],
    "transfer": ["transfer", "send", "move", "wire", "payment"],
    "weather": ["weather", "rain", "sunny", "forecast", "cold"],
    "music": ["music", "song", "play", "volume", "album"],
}


def intent_sentence(intent: str, i: int) -> str:
    words = INTENT_WORDS[intent]
    return f"{words[i % len(words)]} {words[(i + 1) % len(words)]} please {i}"


def write_clinc_fixture(path, n_intents=3, per_train=5, per_val=2, per_test=2, per_oos=2):
    """Miniature file in the clinc150 full-release shape."""
    intents = list(INTENT_WORDS)[:n_intents]
    data = {
        "train": [[intent_sentence(c, i), c] for c in intents for i in range(per_train)],
        "val": [[intent_sentence(c, i + 50), c] for c in intents for i in range(per_val)],
        "test": [[intent_sentence(c, i + 90), c] for c in intents for i in range(per_test)],
        "oos_train": [[f"totally unrelated chatter {i}", "oos"] for i in range(per_oos)],
        "oos_val": [[f"meaningless words {i}", "oos"] for i in range(per_oos)],
        "oos_test": [[f"out of scope ramble {i}", "oos"] for i in range(per_oos)],
    }
    target = path / "data_full.json"
    target.write_text(json.dumps(data))
    return path


def write_tsv_fixture(path, n_intents=3, per_split=(6, 2, 3)):
    intents = list(INTENT_WORDS)[:n_intents]
    names = {"train": per_split[0], "dev": per_split[1], "test": per_split[2]}
    for split, n in names.items():
        lines = ["text\tlabel"]
        for c in intents:
            for i in range(n):
                lines.append(f"{intent_sentence(c, i)}\t{c}")
        (path / f"{split}.tsv").write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def clinc_dir(tmp_path):
    d = tmp_path / "clinc"
    d.mkdir()
    return write_clinc_fixture(d)


@pytest.fixture
def tsv_dir(tmp_path):
    d = tmp_path / "tsv"
    d.mkdir()
    return write_tsv_fixture(d)
