import numpy as np
import pytest
import torch

import transformers

from ecol.encoder import BagOfTokensEncoder, Tokenizer
from ecol.evaluation import DatasetSplit, load_fact_check_corpus
from ecol.preprocess import normalize_text
from ecol.retrieval import build_index
from ecol.sources import ReliabilityMap, SourceFeaturizer, Unshortener, build_description_map
from ecol.synthetic import fixture_path, synthetic_posts

transformers.logging.set_verbosity_error()
transformers.utils.logging.disable_progress_bar()
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def train_split():
    return DatasetSplit("train", synthetic_posts(200, seed=0, split="train"))


@pytest.fixture(scope="session")
def dev_split():
    return DatasetSplit("dev", synthetic_posts(120, seed=1, split="dev"))


@pytest.fixture(scope="session")
def tokenizer(tmp_path_factory, train_split):
    texts = [normalize_text(p.raw_text) for p in train_split.posts]
    return Tokenizer.train(texts, tmp_path_factory.mktemp("vocab"), vocab_size=1500)


@pytest.fixture(scope="session")
def bag_encoder(tokenizer):
    return BagOfTokensEncoder(tokenizer, seed=0).eval()


@pytest.fixture(scope="session")
def corpus():
    return load_fact_check_corpus(fixture_path("corpus"))


@pytest.fixture(scope="session")
def index(corpus):
    return build_index(corpus)


@pytest.fixture(scope="session")
def reliability():
    return ReliabilityMap.from_csv(fixture_path("reliability"))


@pytest.fixture(scope="session")
def descriptions():
    return build_description_map(fixture_path("descriptions"))


@pytest.fixture()
def featurizer(reliability, descriptions, bag_encoder):
    return SourceFeaturizer(reliability, descriptions, bag_encoder, Unshortener(fixture_path("unshorten_cache")))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion in the terminal summary

_CRITERIA: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = str(marker[0]), marker[1]
    if report.when == "call" or report.outcome != "passed":
        if report.skipped:
            outcome = "SKIP"
        else:
            outcome = "PASS" if report.passed else "FAIL"
        prev = _CRITERIA.get(number)
        if prev is None or prev[1] == "PASS":
            line = ""
            if report.failed:
                crash = getattr(report.longrepr, "reprcrash", None)
                line = crash.message.splitlines()[0] if crash else str(report.longrepr).splitlines()[-1]
            _CRITERIA[number] = (title, outcome, line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=lambda k: (int(k.split("-")[0]), k)):
        title, outcome, detail = _CRITERIA[number]
        line = f"criterion {number}: {outcome}  {title}"
        if detail:
            line += f"  ({detail[:160]})"
        terminalreporter.write_line(line)
