from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(blank=True, max_length=120)),
                ('mode', models.CharField(max_length=32)),
                ('strategy', models.CharField(max_length=64)),
                ('seed', models.PositiveBigIntegerField()),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('running', 'Running'), ('finished', 'Finished'), ('diverged', 'Diverged'), ('stopped', 'Stopped'), ('failed', 'Failed')], default='running', max_length=16)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('records_path', models.CharField(blank=True, max_length=512)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
