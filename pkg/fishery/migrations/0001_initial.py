# Generated by Django 5.2.4 on 2026-10-19 09:12

import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ScenarioRun",
            fields=[
                (
                    "id",
                    models.UUIDField(
                        default=uuid.uuid4,
                        editable=False,
                        primary_key=True,
                        serialize=False,
                    ),
                ),
                (
                    "command",
                    models.CharField(
                        choices=[
                            ("solve", "Solve value function"),
                            ("simulate", "Simulate strategies"),
                            ("pulse", "Pulse fishing"),
                            ("tax-sim", "Taxation simulation"),
                            ("critical-tax", "Critical tax"),
                            ("validate", "Validate configuration"),
                        ],
                        max_length=20,
                    ),
                ),
                ("config_path", models.CharField(max_length=500)),
                ("config_echo", models.JSONField(blank=True, default=dict)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("queued", "Queued"),
                            ("processing", "Processing"),
                            ("completed", "Completed"),
                            ("failed", "Failed"),
                        ],
                        default="queued",
                        max_length=20,
                    ),
                ),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("output_dir", models.CharField(blank=True, max_length=500)),
                ("error_message", models.TextField(blank=True, null=True)),
                ("created_date", models.DateTimeField(auto_now_add=True)),
                ("completed_date", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ["-created_date"],
            },
        ),
    ]
