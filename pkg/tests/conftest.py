"""Shared test fixtures: seeded databases, catalogs, detection pipelines."""

from __future__ import annotations

import pytest

from sqltriage.catalog import build_catalog
from sqltriage.exec_probe import connect_readonly
from sqltriage.fixtures import MICRO_CORPUS, build_all
from sqltriage.pipeline import DetectionPipeline


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("dbs")
    return build_all(root)


@pytest.fixture(scope="session")
def catalogs(fixture_paths):
    return {db_id: build_catalog(p) for db_id, p in fixture_paths.items()}


@pytest.fixture(scope="session")
def pipelines(fixture_paths, catalogs):
    return {
        db_id: DetectionPipeline(
            catalog=catalogs[db_id], db=connect_readonly(path))
        for db_id, path in fixture_paths.items()
    }


@pytest.fixture(scope="session")
def micro_corpus():
    return MICRO_CORPUS


@pytest.fixture(scope="session")
def paired_examples(micro_corpus):
    """The paired cases as one labeled corpus: 9 incorrect + 9 correct."""
    from sqltriage.harness import DatasetExample

    examples = []
    for i, case in enumerate(micro_corpus):
        for tag, predicted in (("bad", case.incorrect_sql),
                               ("good", case.correct_sql)):
            examples.append(DatasetExample(
                query_id=f"pair{i}-{tag}",
                question=case.question,
                db_id=case.db_id,
                gold_sql=case.correct_sql,
                predicted_sql=predicted,
                evidence=case.evidence,
            ))
    return examples
