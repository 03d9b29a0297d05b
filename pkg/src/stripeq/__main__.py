import sys

from stripeq.cli import main

sys.exit(main())
