import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExpertDataset',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('path', models.CharField(max_length=1024, unique=True)),
                ('env_type', models.CharField(choices=[('matrix', 'matrix'), ('gems', 'gems')], max_length=16)),
                ('env_hash', models.CharField(max_length=64)),
                ('solver_seed', models.PositiveBigIntegerField(default=0)),
                ('lam', models.FloatField(validators=[django.core.validators.MinValueValidator(0.0)])),
                ('damping', models.FloatField(validators=[django.core.validators.MinValueValidator(0.0)])),
                ('residual', models.FloatField(validators=[django.core.validators.MinValueValidator(0.0)])),
                ('expert_return', models.FloatField()),
                ('n_transitions', models.PositiveIntegerField()),
                ('created_time', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ('-created_time',),
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('algorithm', models.CharField(choices=[('mamql', 'mamql'), ('bc', 'bc'), ('iql-indep', 'iql-indep'), ('iql-ma', 'iql-ma')], max_length=16)),
                ('env_type', models.CharField(choices=[('matrix', 'matrix'), ('gems', 'gems')], max_length=16)),
                ('env_hash', models.CharField(max_length=64)),
                ('seed', models.PositiveBigIntegerField(default=0)),
                ('dataset_size', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('output_dir', models.CharField(max_length=1024, unique=True)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=16)),
                ('episodes', models.PositiveIntegerField(default=0)),
                ('env_steps', models.PositiveBigIntegerField(default=0)),
                ('converged_at', models.PositiveIntegerField(blank=True, null=True)),
                ('created_time', models.DateTimeField(auto_now_add=True)),
                ('updated_time', models.DateTimeField(auto_now=True)),
                ('dataset', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='runs', to='experiments.expertdataset')),
            ],
            options={
                'ordering': ('-created_time',),
            },
        ),
        migrations.CreateModel(
            name='Evaluation',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('episode', models.PositiveIntegerField()),
                ('env_steps', models.PositiveBigIntegerField(default=0)),
                ('total_return', models.FloatField()),
                ('returns', models.JSONField()),
                ('return_stderr', models.JSONField()),
                ('nll', models.JSONField()),
                ('reward_mse', models.JSONField(blank=True, null=True)),
                ('tv', models.JSONField(blank=True, null=True)),
                ('wall_clock', models.FloatField(default=0.0)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='evaluations', to='experiments.trainingrun')),
            ],
            options={
                'ordering': ('run', 'episode'),
                'constraints': [models.UniqueConstraint(fields=('run', 'episode'), name='unique_evaluation_episode')],
            },
        ),
    ]
