from equil.cli import CommandLineInterface

CommandLineInterface.entrypoint()
