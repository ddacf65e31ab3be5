from django.apps import AppConfig


class LearnerAppConfig(AppConfig):
    name = "learner"
    verbose_name = "GMA learner"
