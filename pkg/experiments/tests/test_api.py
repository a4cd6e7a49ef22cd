from django.contrib.auth import get_user_model
from django.test import TestCase
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APIClient

from experiments.models import ExpertDataset, TrainingRun
from experiments.serializers import (
    ExpertDatasetSerializer,
    EvaluationSerializer,
    TrainingRunListSerializer,
    TrainingRunRetrieveSerializer
)
from experiments.tests.test_models import (
    sample_dataset,
    sample_evaluation,
    sample_run
)

DATASETS_URL = reverse("experiments:expertdataset-list")
RUNS_URL = reverse("experiments:trainingrun-list")
EVALUATIONS_URL = reverse("experiments:evaluation-list")


def detail_url(name: str, pk: int) -> str:
    return reverse(f"experiments:{name}-detail", args=[pk])


class PublicExperimentApiTests(TestCase):
    """Test unauthenticated read access to the run registry."""

    def setUp(self) -> None:
        self.client = APIClient()

    def test_read_without_authentication(self) -> None:
        for url in (DATASETS_URL, RUNS_URL, EVALUATIONS_URL):
            res = self.client.get(url)
            self.assertEqual(res.status_code, status.HTTP_200_OK)

    def test_writes_require_authentication(self) -> None:
        res = self.client.post(RUNS_URL, {"algorithm": "mamql"})

        self.assertIn(
            res.status_code,
            (status.HTTP_401_UNAUTHORIZED, status.HTTP_403_FORBIDDEN)
        )


class PrivateExperimentApiTests(TestCase):
    """Test the run registry endpoints."""

    def setUp(self) -> None:
        self.client = APIClient()
        self.user = get_user_model().objects.create_user(
            "researcher",
            password="testpass123"
        )
        self.client.force_authenticate(self.user)

    def test_list_datasets(self) -> None:
        sample_dataset()
        sample_dataset(path="/tmp/runs/gems/expert.jsonl", env_type="gems")

        res = self.client.get(DATASETS_URL)

        serializer = ExpertDatasetSerializer(ExpertDataset.objects.all(), many=True)
        self.assertEqual(res.status_code, status.HTTP_200_OK)
        self.assertEqual(res.data["results"], serializer.data)

    def test_filter_datasets_by_env_type(self) -> None:
        matrix = sample_dataset()
        gems = sample_dataset(path="/tmp/runs/gems/expert.jsonl", env_type="gems")

        res = self.client.get(DATASETS_URL, {"env_type": "gems"})

        ids = [item["id"] for item in res.data["results"]]
        self.assertIn(gems.id, ids)
        self.assertNotIn(matrix.id, ids)

    def test_list_runs(self) -> None:
        run = sample_run()
        sample_evaluation(run, episode=50, total_return=2.0)
        sample_evaluation(run, episode=100, total_return=3.5)
        sample_run(algorithm="bc", output_dir="/tmp/runs/bc/n500_s0")

        res = self.client.get(RUNS_URL)

        serializer = TrainingRunListSerializer(TrainingRun.objects.all(), many=True)
        self.assertEqual(res.status_code, status.HTTP_200_OK)
        self.assertEqual(res.data["results"], serializer.data)
        finals = {item["id"]: item["final_return"] for item in res.data["results"]}
        self.assertEqual(finals[run.id], 3.5)

    def test_filter_runs(self) -> None:
        mamql = sample_run()
        bc = sample_run(algorithm="bc", output_dir="/tmp/runs/bc/n500_s0")
        gems = sample_run(
            env_type="gems",
            output_dir="/tmp/runs/gems/mamql/n500_s0",
            status=TrainingRun.Status.COMPLETED
        )

        by_algorithm = self.client.get(RUNS_URL, {"algorithm": "bc"})
        by_env = self.client.get(RUNS_URL, {"env_type": "gems"})
        by_status = self.client.get(RUNS_URL, {"status": "running"})

        self.assertEqual([item["id"] for item in by_algorithm.data["results"]], [bc.id])
        self.assertEqual([item["id"] for item in by_env.data["results"]], [gems.id])
        self.assertEqual(
            sorted(item["id"] for item in by_status.data["results"]),
            sorted([mamql.id, bc.id])
        )

    def test_retrieve_run(self) -> None:
        run = sample_run(dataset=sample_dataset())
        sample_evaluation(run)

        res = self.client.get(detail_url("trainingrun", run.id))

        serializer = TrainingRunRetrieveSerializer(run)
        self.assertEqual(res.status_code, status.HTTP_200_OK)
        self.assertEqual(res.data, serializer.data)
        self.assertEqual(res.data["dataset"]["n_transitions"], 2000)
        self.assertEqual(len(res.data["evaluations"]), 1)

    def test_filter_evaluations_by_runs(self) -> None:
        first = sample_run()
        second = sample_run(seed=1, output_dir="/tmp/runs/mamql/n500_s1")
        third = sample_run(seed=2, output_dir="/tmp/runs/mamql/n500_s2")
        in_first = sample_evaluation(first)
        in_second = sample_evaluation(second)
        in_third = sample_evaluation(third)

        res = self.client.get(EVALUATIONS_URL, {"run": f"{first.id},{second.id}"})

        self.assertIn(EvaluationSerializer(in_first).data, res.data["results"])
        self.assertIn(EvaluationSerializer(in_second).data, res.data["results"])
        self.assertNotIn(EvaluationSerializer(in_third).data, res.data["results"])

    def test_retrieve_evaluation(self) -> None:
        evaluation = sample_evaluation(sample_run())

        res = self.client.get(detail_url("evaluation", evaluation.id))

        self.assertEqual(res.status_code, status.HTTP_200_OK)
        self.assertEqual(res.data, EvaluationSerializer(evaluation).data)

    def test_registry_is_read_only(self) -> None:
        run = sample_run()

        create = self.client.post(RUNS_URL, {"algorithm": "bc"})
        update = self.client.patch(detail_url("trainingrun", run.id), {"seed": 4})
        delete = self.client.delete(detail_url("trainingrun", run.id))

        for res in (create, update, delete):
            self.assertEqual(res.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
        self.assertTrue(TrainingRun.objects.filter(id=run.id).exists())
