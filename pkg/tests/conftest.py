from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# Filled by test_acceptance.record(); printed once at the end of the session.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
