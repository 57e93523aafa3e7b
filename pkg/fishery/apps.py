from django.apps import AppConfig


class FisheryConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "fishery"
    verbose_name = "Fishery harvesting and taxation"
