import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('solve', 'Solve'), ('size', 'Size'), ('sweep_ds', 'ds sweep'), ('diagnose', 'Diagnose')], max_length=20)),
                ('scenario', models.CharField(blank=True, default='', max_length=500)),
                ('fingerprint', models.CharField(db_index=True, max_length=64)),
                ('output_dir', models.CharField(blank=True, default='', max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('optimal', 'Optimal'), ('infeasible', 'Infeasible'), ('max-iter', 'Iteration limit'), ('numerical-failure', 'Numerical failure'), ('error', 'Error')], default='running', max_length=20)),
                ('objective', models.FloatField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
                'indexes': [models.Index(fields=['command'], name='racesizing__command_3f1a2b_idx'), models.Index(fields=['status'], name='racesizing__status_8c4d1e_idx')],
            },
        ),
        migrations.CreateModel(
            name='RunEntry',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('n_p', models.PositiveIntegerField()),
                ('model', models.CharField(max_length=30)),
                ('formulation', models.CharField(max_length=20)),
                ('ds', models.FloatField()),
                ('race_time', models.FloatField(blank=True, null=True)),
                ('status', models.CharField(choices=[('running', 'Running'), ('optimal', 'Optimal'), ('infeasible', 'Infeasible'), ('max-iter', 'Iteration limit'), ('numerical-failure', 'Numerical failure'), ('error', 'Error')], max_length=20)),
                ('terminal_soc', models.FloatField(blank=True, null=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='entries', to='racesizing.run')),
            ],
            options={
                'ordering': ['run', 'model', 'n_p'],
            },
        ),
    ]
