import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='EstimationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('recording_path', models.CharField(blank=True, help_text='Path of the analysed WAV file', max_length=500)),
                ('label', models.CharField(blank=True, db_index=True, help_text='Free-form label, e.g. recording or task name', max_length=200)),
                ('config', models.JSONField(default=dict, help_text='Snapshot of the pipeline configuration used')),
                ('sample_rate', models.FloatField(help_text='Sample rate of the recording in Hz')),
                ('duration_s', models.FloatField(help_text='Recording duration in seconds')),
                ('vote_count', models.IntegerField(default=0, help_text='Number of pseudointensity votes cast')),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created', '-id'],
            },
        ),
        migrations.CreateModel(
            name='SourceEstimate',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('rank', models.PositiveIntegerField(help_text='1 = highest smoothed-histogram peak')),
                ('azimuth', models.FloatField(help_text='Degrees in [0, 360)')),
                ('inclination', models.FloatField(help_text='Degrees from the +z pole')),
                ('peak_height', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='estimates', to='doa.estimationrun')),
            ],
            options={
                'ordering': ['rank'],
                'constraints': [models.UniqueConstraint(fields=('run', 'rank'), name='unique_rank_per_run')],
            },
        ),
    ]
