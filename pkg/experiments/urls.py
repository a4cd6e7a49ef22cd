from django.urls import path, include
from rest_framework import routers

from experiments.views import (
    ExpertDatasetViewSet,
    TrainingRunViewSet,
    EvaluationViewSet
)

router = routers.DefaultRouter()

router.register("datasets", ExpertDatasetViewSet)
router.register("runs", TrainingRunViewSet)
router.register("evaluations", EvaluationViewSet)

urlpatterns = [
    path("", include(router.urls))
]

app_name = "experiments"
