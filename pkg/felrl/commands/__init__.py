from importlib import import_module


def register_commands(app, subparsers):
    """
    Dynamically load all subcommand modules at startup.
    """
    for module in ["run", "verify", "aggregate", "suite"]:
        import_module(f"felrl.commands.{module}").setup(app, subparsers)
