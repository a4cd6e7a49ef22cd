from django.db.models import QuerySet
from django.http import HttpResponse, HttpRequest
from drf_spectacular.types import OpenApiTypes
from drf_spectacular.utils import extend_schema, OpenApiParameter
from rest_framework import viewsets, mixins, serializers

from experiments.models import ExpertDataset, TrainingRun, Evaluation
from experiments.serializers import (
    ExpertDatasetSerializer,
    TrainingRunSerializer,
    TrainingRunListSerializer,
    TrainingRunRetrieveSerializer,
    EvaluationSerializer
)


class ExpertDatasetViewSet(
    mixins.ListModelMixin,
    mixins.RetrieveModelMixin,
    viewsets.GenericViewSet
):
    queryset = ExpertDataset.objects.all()
    serializer_class = ExpertDatasetSerializer

    def get_queryset(self) -> QuerySet:
        queryset = self.queryset

        env_type = self.request.query_params.get("env_type")
        if env_type:
            queryset = queryset.filter(env_type=env_type)

        return queryset

    @extend_schema(
        parameters=[
            OpenApiParameter(
                "env_type",
                type=OpenApiTypes.STR,
                description="Filter datasets by environment type "
                            "(ex. ?env_type=gems)."
            )
        ]
    )
    def list(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Get a list of all expert datasets."""
        return super().list(request, *args, **kwargs)

    def retrieve(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Retrieve the manifest of a specific expert dataset."""
        return super().retrieve(request, *args, **kwargs)


class TrainingRunViewSet(
    mixins.ListModelMixin,
    mixins.RetrieveModelMixin,
    viewsets.GenericViewSet
):
    queryset = TrainingRun.objects.select_related("dataset")
    serializer_class = TrainingRunSerializer

    def get_queryset(self) -> QuerySet:
        queryset = self.queryset

        algorithm = self.request.query_params.get("algorithm")
        env_type = self.request.query_params.get("env_type")
        status = self.request.query_params.get("status")

        if algorithm:
            queryset = queryset.filter(algorithm=algorithm)
        if env_type:
            queryset = queryset.filter(env_type=env_type)
        if status:
            queryset = queryset.filter(status=status)
        if self.action == "retrieve":
            queryset = queryset.prefetch_related("evaluations")

        return queryset

    def get_serializer_class(self) -> type(serializers.ModelSerializer):
        if self.action == "list":
            return TrainingRunListSerializer
        if self.action == "retrieve":
            return TrainingRunRetrieveSerializer
        return self.serializer_class

    @extend_schema(
        parameters=[
            OpenApiParameter(
                "algorithm",
                type=OpenApiTypes.STR,
                description="Filter runs by algorithm (ex. ?algorithm=mamql)."
            ),
            OpenApiParameter(
                "env_type",
                type=OpenApiTypes.STR,
                description="Filter runs by environment type "
                            "(ex. ?env_type=matrix)."
            ),
            OpenApiParameter(
                "status",
                type=OpenApiTypes.STR,
                description="Filter runs by status (ex. ?status=completed)."
            ),
        ]
    )
    def list(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Get a list of all training runs."""
        return super().list(request, *args, **kwargs)

    def retrieve(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Retrieve a run with its dataset and evaluation history."""
        return super().retrieve(request, *args, **kwargs)


class EvaluationViewSet(
    mixins.ListModelMixin,
    mixins.RetrieveModelMixin,
    viewsets.GenericViewSet
):
    queryset = Evaluation.objects.select_related("run")
    serializer_class = EvaluationSerializer

    @staticmethod
    def _params_to_ints(query_string: str) -> list[int]:
        """
        Converts a string of format '1,2,3' to a list of integers [1, 2, 3]
        """
        return [int(str_id) for str_id in query_string.split(",")]

    def get_queryset(self) -> QuerySet:
        queryset = self.queryset

        runs = self.request.query_params.get("run")
        if runs:
            queryset = queryset.filter(run__id__in=self._params_to_ints(runs))

        return queryset

    @extend_schema(
        parameters=[
            OpenApiParameter(
                "run",
                type={"type": "list", "items": {"type": "integer"}},
                description="Filter evaluations by run IDs (ex. ?run=1,2)."
            )
        ]
    )
    def list(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Get a list of evaluation records."""
        return super().list(request, *args, **kwargs)

    def retrieve(self, request: HttpRequest, *args, **kwargs) -> HttpResponse:
        """Retrieve a single evaluation record."""
        return super().retrieve(request, *args, **kwargs)
