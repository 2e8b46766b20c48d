import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('command', models.CharField(choices=[('end_to_end', 'End-to-end evaluation'), ('gap_analysis', 'Threshold gap analysis')], max_length=20)),
                ('manifest', models.JSONField(default=dict)),
                ('seed', models.IntegerField(default=0)),
                ('version', models.CharField(max_length=20)),
                ('output_dir', models.CharField(max_length=500)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('trial', models.PositiveIntegerField(default=0)),
                ('snr', models.CharField(max_length=20)),
                ('snr_db', models.FloatField(blank=True, null=True)),
                ('mode', models.CharField(max_length=20)),
                ('split', models.CharField(choices=[('validation', 'Validation'), ('test', 'Test')], max_length=20)),
                ('threshold', models.JSONField(default=dict)),
                ('micro_f', models.FloatField()),
                ('macro_f', models.FloatField()),
                ('tp', models.PositiveIntegerField(default=0)),
                ('fp', models.PositiveIntegerField(default=0)),
                ('fn', models.PositiveIntegerField(default=0)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='evaluations', to='kws.experimentrun')),
            ],
            options={
                'verbose_name': 'Evaluation Record',
                'verbose_name_plural': 'Evaluation Records',
                'ordering': ['run', 'trial', 'snr_db', 'mode', 'split'],
                'unique_together': {('run', 'trial', 'snr', 'mode', 'split')},
            },
        ),
        migrations.CreateModel(
            name='ThresholdGapRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('trial', models.PositiveIntegerField(default=0)),
                ('snr', models.CharField(max_length=20)),
                ('snr_db', models.FloatField(blank=True, null=True)),
                ('mode', models.CharField(max_length=20)),
                ('estimated_threshold', models.FloatField()),
                ('oracle_threshold', models.FloatField()),
                ('estimated_f', models.FloatField()),
                ('oracle_f', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='gaps', to='kws.experimentrun')),
            ],
            options={
                'verbose_name': 'Threshold Gap Record',
                'verbose_name_plural': 'Threshold Gap Records',
                'ordering': ['run', 'trial', 'snr_db', 'mode'],
                'unique_together': {('run', 'trial', 'snr', 'mode')},
            },
        ),
    ]
