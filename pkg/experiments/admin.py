from django.contrib import admin

from experiments.models import ExpertDataset, TrainingRun, Evaluation


class EvaluationInline(admin.TabularInline):
    model = Evaluation
    extra = 0


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ("algorithm", "env_type", "dataset_size", "seed", "status", "episodes")
    list_filter = ("algorithm", "env_type", "status")
    inlines = (EvaluationInline,)


admin.site.register(ExpertDataset)
admin.site.register(Evaluation)
